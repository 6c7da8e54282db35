"""Adversarial-noise generators for the two-layer network.

The noise ``r`` is the un-scaled attack direction; an adversarial example is
``x + eta * r`` for the one-step methods.  PGD returns the accumulated
perturbation ``x_final - x`` directly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatchError
from .model import forward, input_gradient, sigmoid

METHODS = ("grad_l2", "sign_linf", "pgd")
NORMS = ("l2", "linf")


@dataclass(frozen=True)
class AttackSpec:
    method: str = "grad_l2"
    eta: float = 1.0
    steps: int = 1
    epsilon: float = 0.0
    norm: str = "l2"
    temperature: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if self.method != "pgd" and self.steps != 1:
            raise ValueError(f"{self.method} is a one-step method; steps must be 1")
        if self.method == "pgd" and self.epsilon == 0:
            raise ValueError("pgd needs a positive epsilon (0 would pin the iterate at x)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NoiseRecord:
    r: np.ndarray
    y: int
    sample_id: int
    spec: AttackSpec | None
    residual_factor: float


@dataclass(frozen=True)
class NoiseSet:
    """Noises ``R`` (n x d) with labels and provenance.

    ``residual_factors`` is ``None`` for externally produced noises.
    """

    R: np.ndarray
    y: np.ndarray
    sample_ids: np.ndarray
    spec: AttackSpec | None = None
    residual_factors: np.ndarray | None = None
    fingerprint: dict = field(default_factory=dict)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        if R.ndim != 2:
            raise DimensionMismatchError(f"noises must be a 2-D array, got shape {R.shape}")
        y = np.asarray(self.y, dtype=np.int64)
        ids = np.asarray(self.sample_ids, dtype=np.int64)
        if y.shape != (R.shape[0],) or ids.shape != (R.shape[0],):
            raise DimensionMismatchError("labels and sample ids must have one entry per noise")
        if not np.all(np.isfinite(R)):
            raise ValueError("noise set has non-finite entries")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sample_ids", ids)
        if self.residual_factors is not None:
            object.__setattr__(self, "residual_factors", np.asarray(self.residual_factors, dtype=np.float64))

    @property
    def d(self):
        return self.R.shape[1]

    def __len__(self):
        return self.R.shape[0]

    @property
    def records(self):
        rf = self.residual_factors
        return [
            NoiseRecord(self.R[i], int(self.y[i]), int(self.sample_ids[i]), self.spec,
                        float("nan") if rf is None else float(rf[i]))
            for i in range(len(self))
        ]

    def subset(self, idx):
        idx = np.asarray(idx)
        rf = None if self.residual_factors is None else self.residual_factors[idx]
        return NoiseSet(self.R[idx], self.y[idx], self.sample_ids[idx], self.spec, rf, dict(self.fingerprint))


def residual_factor(p, x, y, temperature=1.0):
    """``1 - sigmoid(y f(x) / T)``, the scalar in front of the gradient."""
    return 1.0 - sigmoid(np.asarray(y) * forward(p, x) / temperature)


def loss_input_gradient(p, x, y, temperature=1.0):
    """Noise direction ``-(1 - s(y f(x)/T)) y grad_x f(x)`` and its residual factor.

    For ``T = 1`` this is exactly the input gradient of the logistic loss;
    for other temperatures it equals ``T`` times that gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    rf = residual_factor(p, x, y, temperature)
    g = input_gradient(p, x)
    coef = -rf * y
    r = coef[..., None] * g if np.ndim(coef) else coef * g
    return r, rf


def _check_method(spec, expected):
    if spec.method != expected:
        raise ValueError(f"spec.method is {spec.method!r}, expected {expected!r}")


def _check_dim(p, x):
    if np.shape(x)[-1] != p.d:
        raise DimensionMismatchError(f"network expects dimension {p.d}, got {np.shape(x)[-1]}")


def _grad_l2_batch(p, X, y, spec):
    return loss_input_gradient(p, X, y, spec.temperature)


def _sign_linf_batch(p, X, y, spec):
    r, rf = loss_input_gradient(p, X, y, spec.temperature)
    return np.sign(r), rf


def _project(delta, spec):
    if spec.norm == "linf":
        return np.clip(delta, -spec.epsilon, spec.epsilon)
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    over = norms > spec.epsilon
    if not np.any(over):
        return delta
    scale = np.where(over, spec.epsilon / np.where(over, norms, 1.0), 1.0)
    return delta * scale


def _pgd_batch(p, X, y, spec):
    # iterate on the perturbation itself so one unconstrained step is bit-exact
    rf = residual_factor(p, X, y, spec.temperature)
    delta = np.zeros_like(X)
    for _ in range(int(spec.steps)):
        g, _ = loss_input_gradient(p, X + delta, y, spec.temperature)
        direction = g if spec.norm == "l2" else np.sign(g)
        delta = _project(delta + spec.eta * direction, spec)
    return delta, rf


_BATCH = {"grad_l2": _grad_l2_batch, "sign_linf": _sign_linf_batch, "pgd": _pgd_batch}


def _single(p, x, y, spec, method, sample_id):
    _check_method(spec, method)
    _check_dim(p, x)
    r, rf = _BATCH[method](p, np.asarray(x, dtype=np.float64), y, spec)
    return NoiseRecord(np.asarray(r), int(y), sample_id, spec, float(rf))


def grad_l2_noise(p, x, y, spec, sample_id=0):
    """One-step loss-gradient noise (the l2 FGSM direction)."""
    return _single(p, x, y, spec, "grad_l2", sample_id)


def sign_linf_noise(p, x, y, spec, sample_id=0):
    """Coordinatewise sign of the loss gradient, with ``sign(0) = 0``."""
    return _single(p, x, y, spec, "sign_linf", sample_id)


def pgd_noise(p, x, y, spec, sample_id=0):
    """Projected gradient ascent from ``x`` inside the ``epsilon`` ball."""
    return _single(p, x, y, spec, "pgd", sample_id)


def adversarial_examples(X, ns):
    """``x + eta r`` for one-step noises, ``x + r`` for PGD."""
    if ns.spec is None:
        raise ValueError("noise set has no attack spec; cannot form adversarial examples")
    scale = 1.0 if ns.spec.method == "pgd" else ns.spec.eta
    return np.asarray(X) + scale * ns.R


def generate_noise_set(p, ds, spec, seed=None):
    """Attack every sample of ``ds``; record order follows the dataset."""
    if ds.n == 0:
        raise ValueError("dataset is empty")
    _check_dim(p, ds.X)
    R, rf = _BATCH[spec.method](p, ds.X, ds.y, spec)
    bad = np.flatnonzero(~np.all(np.isfinite(R), axis=1))
    if bad.size:
        raise ValueError(f"non-finite noise for sample {int(bad[0])}")
    fingerprint = {"seed": seed, "spec": spec.to_dict(), "network": p.fingerprint(), "source": "generated"}
    return NoiseSet(R, ds.y, np.arange(ds.n), spec, rf, fingerprint)


def write_noise_csv(ns, path):
    """Write ``r_1..r_d, y, sample_id`` rows plus a JSON sidecar.

    Values are written with 17 significant digits so a read-back is exact.
    Returns ``(csv_path, sidecar_path)``.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"r_{j + 1}" for j in range(ns.d)] + ["y", "sample_id"])
        for r, y, sid in zip(ns.R, ns.y, ns.sample_ids):
            writer.writerow([format(float(v), ".17g") for v in r] + [int(y), int(sid)])
    sidecar = path.with_name(path.name + ".json")
    meta = {
        "d": ns.d,
        "n": len(ns),
        "spec": None if ns.spec is None else ns.spec.to_dict(),
        "fingerprint": ns.fingerprint,
    }
    if ns.residual_factors is not None:
        meta["residual_factors"] = [float(v) for v in ns.residual_factors]
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, sidecar


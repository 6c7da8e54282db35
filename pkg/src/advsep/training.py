"""Full-batch gradient descent for the two-layer network.

Snapshots track how far the parameters drift from initialization, which is
what the lazy-training (NTK) argument relies on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatchError, TrainingDivergedError
from .model import NetworkParams, activation_pattern, sigmoid
from .numerics import spectral_norm

DIVERGENCE_THRESHOLD = 1e6
LAYERS = ("both", "readout", "hidden")


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    steps: int
    snapshot_every: int = 0
    layers: str = "both"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError(f"steps must be a non-negative integer, got {self.steps}")
        if self.snapshot_every < 0 or self.snapshot_every > max(self.steps, 1):
            raise ValueError("snapshot_every must lie in [0, steps]")
        if self.layers not in LAYERS:
            raise ValueError(f"layers must be one of {LAYERS}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class Snapshot:
    step: int
    params: NetworkParams
    loss: float
    dW_spectral: float
    dW_frobenius: float
    da_norm: float
    flips: np.ndarray

    def manifest_entry(self):
        return {
            "step": self.step,
            "loss": self.loss,
            "dW_spectral": self.dW_spectral,
            "dW_frobenius": self.dW_frobenius,
            "da_norm": self.da_norm,
            "flips": [int(f) for f in self.flips],
        }


def loss_and_param_grads(p, X, y, temperature=1.0):
    """Mean loss ``-log s(y f / T)`` and its gradients in ``W`` and ``a``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D array")
    if X.shape[1] != p.d:
        raise DimensionMismatchError(f"inputs have dimension {X.shape[1]}, network expects {p.d}")
    n = X.shape[0]
    H = X @ p.W.T
    act = np.maximum(H, 0.0)
    z = y * (act @ p.a) / temperature
    loss = float(np.mean(np.logaddexp(0.0, -z)))
    coef = -(1.0 - sigmoid(z)) * y / (temperature * n)
    grad_a = coef @ act
    grad_W = ((coef[:, None] * (H > 0.0)) * p.a).T @ X
    return loss, grad_W, grad_a


def _snapshot(step, p, p0, loss, masks0, X):
    dW = p.W - p0.W
    flips = np.count_nonzero(activation_pattern(p, X) != masks0, axis=1)
    return Snapshot(
        step=step,
        params=p,
        loss=loss,
        dW_spectral=spectral_norm(dW, tol=1e-12) if np.any(dW) else 0.0,
        dW_frobenius=float(np.linalg.norm(dW)),
        da_norm=float(np.linalg.norm(p.a - p0.a)),
        flips=flips,
    )


def gd_train(p0, ds, cfg):
    """Train from ``p0`` and return snapshots (always including step 0 and the last step)."""
    X, y = ds.X, ds.y
    masks0 = activation_pattern(p0, X)
    p = p0
    W = np.array(p0.W)
    a = np.array(p0.a)
    snaps = []
    for step in range(cfg.steps + 1):
        loss, gW, ga = loss_and_param_grads(p, X, y, cfg.temperature)
        if not math.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
            raise TrainingDivergedError(step, loss, DIVERGENCE_THRESHOLD)
        due = step == 0 or step == cfg.steps or (cfg.snapshot_every and step % cfg.snapshot_every == 0)
        if due:
            snaps.append(_snapshot(step, p, p0, loss, masks0, X))
        if step == cfg.steps:
            break
        if cfg.layers in ("both", "hidden"):
            W = W - cfg.lr * gW
        if cfg.layers in ("both", "readout"):
            a = a - cfg.lr * ga
        p = NetworkParams(W, a)
    return snaps


def ntk_ball_perturbation(p0, radius_w, radius_a, rng):
    """``p0`` plus a random perturbation of exact size.

    ``Delta W`` is a rank-one Gaussian outer product rescaled to spectral norm
    ``radius_w``; ``Delta a`` is a Gaussian direction rescaled to norm ``radius_a``.
    """
    if radius_w < 0 or radius_a < 0:
        raise ValueError("radii must be non-negative")
    u = rng.standard_normal(p0.m)
    v = rng.standard_normal(p0.d)
    da = rng.standard_normal(p0.m)
    # ||u v^T||_2 = ||u|| ||v||
    dW = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v)) * radius_w
    da = da / np.linalg.norm(da) * radius_a
    return NetworkParams(p0.W + dW, p0.a + da)


def save_snapshots(snapshots, directory):
    """One ``.npz`` per snapshot plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in snapshots:
        fname = f"snapshot_{s.step:06d}.npz"
        np.savez(directory / fname, W=s.params.W, a=s.params.a, flips=s.flips)
        entries.append({**s.manifest_entry(), "file": fname})
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"snapshots": entries}, indent=2))
    return manifest


def load_snapshots(directory):
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    out = []
    for e in meta["snapshots"]:
        with np.load(directory / e["file"]) as z:
            params = NetworkParams(z["W"], z["a"])
            flips = z["flips"]
        out.append(Snapshot(e["step"], params, e["loss"], e["dW_spectral"], e["dW_frobenius"], e["da_norm"], flips))
    return out

"""Two-layer bias-free ReLU network ``f(x) = a^T relu(W x)`` and its data.

Every function accepts either a single input vector ``x`` of shape ``(d,)``
or a batch ``X`` of shape ``(n, d)`` and returns the matching shape.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatchError, IngestError
from .numerics import as_matrix, as_vector, gaussian_matrix


@dataclass(frozen=True)
class NetworkParams:
    """Hidden weights ``W`` (m x d) and readout ``a`` (m,)."""

    W: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        W = np.array(as_matrix(self.W, "W"))
        a = np.array(as_vector(self.a, "a"))
        if W.shape[0] != a.shape[0]:
            raise DimensionMismatchError(f"W has {W.shape[0]} rows but a has {a.shape[0]} entries")
        W.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "a", a)

    @property
    def d(self):
        return self.W.shape[1]

    @property
    def m(self):
        return self.W.shape[0]

    def fingerprint(self):
        """Short content hash, stable across runs for identical parameters."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.W).tobytes())
        h.update(np.ascontiguousarray(self.a).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class LabeledDataset:
    """``n`` inputs ``X`` (n x d) with labels ``y`` in {-1, +1}."""

    X: np.ndarray
    y: np.ndarray
    norm_conditioned: bool = False

    def __post_init__(self):
        X = np.array(as_matrix(self.X, "X"))
        y = np.asarray(self.y)
        if y.shape != (X.shape[0],):
            raise DimensionMismatchError(f"{X.shape[0]} inputs but labels have shape {y.shape}")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        y = y.astype(np.int64)
        if self.norm_conditioned:
            norms = np.linalg.norm(X, axis=1)
            if not np.allclose(norms, math.sqrt(X.shape[1]), rtol=1e-9, atol=0):
                raise ValueError("dataset flagged norm-conditioned but ||x|| != sqrt(d)")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    @property
    def samples(self):
        return [LabeledSample(x, int(y)) for x, y in zip(self.X, self.y)]


def init_network(d, m, rng):
    """Gaussian initialization: ``W_ij ~ N(0, 1/d)``, ``a_k ~ N(0, 1/m)``.

    ``W`` and ``a`` come from two independent child streams of ``rng``.
    """
    if d < 1 or m < 1:
        raise ValueError(f"dimensions must be positive, got d={d}, m={m}")
    rng_w, rng_a = rng.spawn(2)
    W = gaussian_matrix(m, d, 1.0 / d, rng_w)
    a = gaussian_matrix(1, m, 1.0 / m, rng_a)[0]
    return NetworkParams(W, a)


def _inputs(p, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != p.d:
        raise DimensionMismatchError(f"network expects inputs of dimension {p.d}, got shape {x.shape}")
    return x


def preactivations(p, x):
    """``W x`` with shape ``(m,)`` or ``(n, m)``."""
    x = _inputs(p, x)
    return x @ p.W.T


def forward(p, x):
    x = _inputs(p, x)
    out = np.maximum(x @ p.W.T, 0.0) @ p.a
    return float(out) if x.ndim == 1 else out


def activation_pattern(p, x):
    """Boolean mask of active units; ``relu'(0)`` is taken to be 0."""
    return preactivations(p, x) > 0.0


def input_gradient(p, x, mask=None):
    """``W^T D_x a``, the gradient of ``f`` with respect to the input."""
    if mask is None:
        mask = activation_pattern(p, x)
    return (mask * p.a) @ p.W


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def sample_loss(p, x, y, temperature=1.0):
    """``-log sigmoid(y f(x) / T)``; ``T = 1`` is the plain logistic loss."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(y) * forward(p, x) / temperature
    out = np.logaddexp(0.0, -z)
    return float(out) if np.ndim(out) == 0 else out


def condition_norms(ds):
    """Rescale every input to norm ``sqrt(d)``; labels are untouched."""
    norms = np.linalg.norm(ds.X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"sample {int(zero[0])} is the zero vector and cannot be rescaled")
    target = math.sqrt(ds.d)
    if ds.norm_conditioned and np.allclose(norms, target, rtol=1e-12, atol=0):
        return ds
    X = ds.X * (target / norms)[:, None]
    return LabeledDataset(X, ds.y, norm_conditioned=True)


def two_cluster_dataset(n, d, separation, rng, condition=True):
    """Two Gaussian clusters at ``+-mu`` with ``||mu|| = separation``.

    Labels are balanced in expectation; the cluster direction is a random unit
    vector drawn from ``rng``.  With ``condition`` the result is rescaled to
    ``||x|| = sqrt(d)``.
    """
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, -1, 1)
    X = rng.standard_normal((n, d)) + (separation * y)[:, None] * direction
    ds = LabeledDataset(X, y)
    return condition_norms(ds) if condition else ds


def load_dataset_csv(path, expected_dim=None):
    """Read ``x_1..x_d, y`` rows (header required) into a dataset."""
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(path, "empty file") from None
        if not header or header[-1].strip() != "y" or not header[0].strip().startswith("x"):
            raise IngestError(path, "header must be x_1..x_d,y", row=1)
        d = len(header) - 1
        if expected_dim is not None and d != expected_dim:
            raise IngestError(path, f"expected {expected_dim} features, header has {d}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise IngestError(path, f"expected {d + 1} fields, got {len(row)}", row=lineno)
            try:
                vals = [float(v) for v in row[:-1]]
                label = float(row[-1])
            except ValueError as exc:
                raise IngestError(path, str(exc), row=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise IngestError(path, "non-finite feature value", row=lineno)
            if label not in (-1.0, 1.0):
                raise IngestError(path, f"label must be -1 or +1, got {row[-1]!r}", row=lineno)
            rows.append(vals)
            labels.append(int(label))
    if not rows:
        raise IngestError(path, "no data rows")
    return LabeledDataset(np.array(rows), np.array(labels))


def save_dataset_csv(ds, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j + 1}" for j in range(ds.d)] + ["y"])
        for x, y in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
    return path

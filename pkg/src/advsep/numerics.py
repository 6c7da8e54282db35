"""Seedable sampling and the few linear-algebra primitives the rest builds on.

Matrices and vectors are plain ``numpy.ndarray`` objects in float64.  All
randomness flows through :class:`numpy.random.Generator` backed by PCG64,
which is bit-reproducible across platforms for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatchError

RNG_ALGORITHM = "numpy.PCG64"

# relative tolerance deciding whether a Gram-Schmidt residual is a new direction
RANK_RTOL = 1e-10


def make_rng(seed):
    """Return a PCG64 generator for ``seed`` (an int or a sequence of ints)."""
    return np.random.Generator(np.random.PCG64(seed))


def trial_seed(base_seed, index):
    """Seed for the ``index``-th independent trial of a batch."""
    return int(base_seed) + int(index)


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def as_matrix(m, name="matrix"):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def gaussian_matrix(rows, cols, variance, rng):
    """Matrix with i.i.d. ``N(0, variance)`` entries drawn from ``rng``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got ({rows}, {cols})")
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return rng.standard_normal((int(rows), int(cols))) * math.sqrt(variance)


@dataclass(frozen=True)
class Projector:
    """Orthogonal projector onto the span of ``basis`` (rows are orthonormal)."""

    basis: np.ndarray

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64, ndmin=2)
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def rank(self):
        return self.basis.shape[0]

    def _check(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"projector acts on R^{self.dim}, got trailing dimension {v.shape[-1]}"
            )
        return v

    def apply(self, v):
        """Project ``v`` (a vector, or rows of a matrix) onto the subspace."""
        v = self._check(v)
        return (v @ self.basis.T) @ self.basis

    def complement(self, v):
        v = self._check(v)
        return v - self.apply(v)

    def matrix(self):
        """Dense ``dim x dim`` representation; for tests and small problems."""
        return self.basis.T @ self.basis


def projector_from_columns(columns):
    """Orthonormalize ``columns`` by modified Gram-Schmidt with one re-pass.

    ``columns`` is a sequence of vectors or a ``(dim, k)`` array.  Directions
    whose residual falls below ``RANK_RTOL`` times the largest input norm are
    dropped, so dependent inputs lower the rank instead of failing.
    """
    if isinstance(columns, np.ndarray) and columns.ndim == 2:
        cols = [columns[:, j] for j in range(columns.shape[1])]
    else:
        cols = [np.asarray(c, dtype=np.float64) for c in columns]
    if not cols:
        raise ValueError("need at least one column")
    dim = cols[0].shape
    for j, c in enumerate(cols):
        if c.ndim != 1 or c.shape != dim:
            raise DimensionMismatchError(f"column {j} has shape {c.shape}, expected {dim}")
    scale = max(float(np.linalg.norm(c)) for c in cols)
    basis = []
    for c in cols:
        w = np.array(c, dtype=np.float64)
        for _ in range(2):
            for q in basis:
                w -= (q @ w) * q
        norm = float(np.linalg.norm(w))
        if scale > 0 and norm > RANK_RTOL * scale:
            basis.append(w / norm)
    if not basis:
        return Projector(np.zeros((0, dim[0])))
    return Projector(np.vstack(basis))


def apply_complement(p, v):
    """``(I - P) v``; the result is orthogonal to every basis vector of ``p``."""
    return p.complement(v)


def chi_square_tail_bound(z, dof, side):
    """Bound ``(z e^{1-z})^{dof/2}`` on a chi-square tail.

    ``side='lower'`` bounds ``P{X < z*dof}`` and needs ``z < 1``;
    ``side='upper'`` bounds ``P{X > z*dof}`` and needs ``z > 1``.
    """
    if dof < 1:
        raise ValueError("dof must be positive")
    if side == "lower":
        if not 0 < z < 1:
            raise ValueError(f"lower tail needs 0 < z < 1, got {z}")
    elif side == "upper":
        if not z > 1:
            raise ValueError(f"upper tail needs z > 1, got {z}")
    else:
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    # log form avoids underflow in the intermediate power
    return math.exp(0.5 * dof * (math.log(z) + 1.0 - z))


def spectral_norm(m, tol=1e-10, max_iter=100_000):
    """Largest singular value of ``m`` by power iteration on ``m^T m``.

    Stops once the relative change of the estimate drops below ``tol``.  The
    start vector comes from a fixed seed, so the result is deterministic.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not np.any(m):
        return 0.0
    # iterate in the smaller of the two Gram spaces
    if m.shape[0] < m.shape[1]:
        m = m.T
    v = make_rng(0).standard_normal(m.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = m @ v
        w = m.T @ u
        wnorm = float(np.linalg.norm(w))
        if wnorm == 0.0:
            return 0.0
        new_sigma = math.sqrt(float(v @ w))
        v = w / wnorm
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma

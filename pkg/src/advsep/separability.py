"""Linear separability of labeled noise sets.

Three independent routes: the closed-form witnesses ``-W^T a`` and its
projection off the data span, an exact perceptron decision procedure, and a
trained multinomial logistic probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import NoiseSet
from .exceptions import DimensionMismatchError, NotSeparableError
from .numerics import projector_from_columns

ORIGINS = ("theoretical", "projected", "perceptron", "probe")


@dataclass(frozen=True)
class Witness:
    v: np.ndarray
    origin: str

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("witness must be a finite vector")
        if not np.any(v):
            raise NotSeparableError("witness is the zero vector")
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class MarginReport:
    margins: np.ndarray
    min_margin: float
    violations: int
    separable: bool

    def to_dict(self, include_margins=False):
        out = {
            "min_margin": self.min_margin,
            "violations": self.violations,
            "separable": self.separable,
            "n": int(self.margins.size),
        }
        if include_margins:
            out["margins"] = [float(m) for m in self.margins]
        return out


def theoretical_witness(p):
    """``v = -W^T a``."""
    return Witness(-(p.a @ p.W), "theoretical")


def projected_witness(p, X):
    """``v' = -(I - P_X) W^T a`` where ``P_X`` projects onto the span of the inputs.

    ``X`` is the ``(n, d)`` input matrix (or a dataset).
    """
    X = np.asarray(getattr(X, "X", X), dtype=np.float64)
    if X.shape[1] != p.d:
        raise DimensionMismatchError(f"inputs have dimension {X.shape[1]}, network expects {p.d}")
    proj = projector_from_columns(X.T)
    if proj.rank >= p.d:
        raise NotSeparableError("inputs span the whole space; the projected witness is zero")
    v = proj.complement(-(p.a @ p.W))
    if np.linalg.norm(v) <= 1e-12 * max(1.0, np.linalg.norm(p.a @ p.W)):
        raise NotSeparableError("projected witness vanished")
    return Witness(v, "projected")


def margin_report(points, labels, w):
    """Margins ``<v, y_i xi_i>`` of arbitrary labeled points."""
    points = np.asarray(points, dtype=np.float64)
    v = w.v if isinstance(w, Witness) else np.asarray(w, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != v.shape[0]:
        raise DimensionMismatchError(f"points of shape {points.shape} vs witness of dimension {v.shape[0]}")
    m = (points @ v) * np.asarray(labels)
    violations = int(np.count_nonzero(m <= 0))
    min_margin = float(m.min()) if m.size else math.inf
    return MarginReport(m, min_margin, violations, violations == 0)


def margins(ns, w):
    return margin_report(ns.R, ns.y, w)


@dataclass(frozen=True)
class PerceptronDecision:
    separable: bool
    witness: Witness | None
    epochs: int
    mistakes: int


def perceptron_decide(ns, max_epochs=1000):
    """Run the bias-free perceptron on the unit-normalized points ``y_i r_i``.

    Returns ``separable`` with a witness as soon as an epoch finishes without
    a mistake and the witness re-verifies on the raw noises; otherwise the
    outcome after ``max_epochs`` is *undecided*, never "inseparable".
    """
    if max_epochs < 1:
        raise ValueError("max_epochs must be at least 1")
    R = ns.R if isinstance(ns, NoiseSet) else np.asarray(ns[0], dtype=np.float64)
    y = ns.y if isinstance(ns, NoiseSet) else np.asarray(ns[1])
    if R.shape[0] == 0:
        raise ValueError("empty noise set")
    Z = R * y[:, None]
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        # a zero point has zero margin against every v
        return PerceptronDecision(False, None, 0, 0)
    Z = Z / norms[:, None]
    v = np.zeros(R.shape[1])
    mistakes = 0
    for epoch in range(1, max_epochs + 1):
        clean = True
        for z in Z:
            if z @ v <= 0.0:
                v += z
                mistakes += 1
                clean = False
        if clean:
            report = margin_report(R, y, v)
            if report.separable:
                return PerceptronDecision(True, Witness(v.copy(), "perceptron"), epoch, mistakes)
    return PerceptronDecision(False, None, max_epochs, mistakes)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by a fixed L-BFGS budget.

    Parameters
    ----------
    max_iter : int, default=50
        Number of L-BFGS iterations.
    classes : array-like or None
        Class labels in index order.  Inferred from ``y`` when None.

    Attributes
    ----------
    coef_ : ndarray of shape (n_classes, n_features)
    intercept_ : ndarray of shape (n_classes,)
    n_iter_ : int
    final_loss_ : float
    """

    def __init__(self, max_iter=50, classes=None):
        self.max_iter = max_iter
        self.classes = classes

    def _loss_grad(self, theta, X, Y):
        n, d = X.shape
        k = Y.shape[1]
        Wb = theta.reshape(k, d + 1)
        logits = X @ Wb[:, :d].T + Wb[:, d]
        logp = log_softmax(logits, axis=1)
        loss = -np.sum(Y * logp) / n
        G = (softmax(logits, axis=1) - Y) / n
        grad = np.hstack([G.T @ X, G.sum(axis=0)[:, None]])
        return loss, grad.ravel()

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y) if self.classes is None else np.asarray(self.classes)
        if classes.size < 2:
            raise ValueError("need at least two classes")
        present = np.unique(y)
        if present.size < 2:
            raise ValueError("training labels contain a single class")
        if not np.all(np.isin(present, classes)):
            raise ValueError(f"labels {present[~np.isin(present, classes)]} are outside {classes}")
        idx = np.searchsorted(classes, y)
        k, d = classes.size, X.shape[1]
        Y = np.zeros((X.shape[0], k))
        Y[np.arange(X.shape[0]), idx] = 1.0
        res = minimize(
            self._loss_grad,
            np.zeros(k * (d + 1)),
            args=(X, Y),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": int(self.max_iter), "gtol": 0.0, "ftol": 0.0},
        )
        Wb = res.x.reshape(k, d + 1)
        self.classes_ = classes
        self.coef_ = Wb[:, :d].copy()
        self.intercept_ = Wb[:, d].copy()
        self.n_iter_ = int(res.nit)
        self.final_loss_ = float(res.fun)
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.coef_.shape[1]:
            raise DimensionMismatchError(f"probe expects {self.coef_.shape[1]} features, got {X.shape[1]}")
        return X @ self.coef_.T + self.intercept_

    def predict(self, X):
        # argmax returns the first maximum, i.e. ties go to the lowest class index
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _probe_labels(y, classes):
    y = np.asarray(y)
    if classes == 2 and np.all(np.isin(y, (-1, 1))):
        return np.array([-1, 1])
    if np.any(y < 0) or np.any(y >= classes):
        raise ValueError(f"labels must lie in 0..{classes - 1}")
    return np.arange(classes)


def train_probe(train, classes=2, max_iter=50):
    """Fit a :class:`LinearProbe` on a noise set (or an ``(X, y)`` pair)."""
    if classes < 2:
        raise ValueError("classes must be at least 2")
    X, y = (train.R, train.y) if isinstance(train, NoiseSet) else train
    probe = LinearProbe(max_iter=max_iter, classes=_probe_labels(y, classes))
    return probe.fit(X, y)


def eval_probe(probe, ns):
    """Fraction of argmax-correct predictions."""
    X, y = (ns.R, ns.y) if isinstance(ns, NoiseSet) else ns
    return float(np.mean(probe.predict(X) == np.asarray(y)))


def probe_witness(probe):
    """For a binary probe, the difference of class weights as a witness."""
    if probe.coef_.shape[0] != 2:
        raise ValueError("only binary probes give a single witness direction")
    return Witness(probe.coef_[1] - probe.coef_[0], "probe")

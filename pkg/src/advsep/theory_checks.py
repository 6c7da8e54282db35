"""Monte-Carlo and algebraic checks of the concentration statements.

Every Monte-Carlo check draws from a single PCG64 stream seeded by
``TrialBatch.base_seed`` and is therefore replayable.  Most checks offer two
samplers:

``"full"``
    draws the whole Gaussian matrix ``W`` for every trial.
``"reduced"``
    draws only the low-dimensional Gaussian quantities the statistic depends
    on.  These are exact in distribution, not approximations: for a fixed
    ``x`` with ``||x|| = sqrt(d)`` the vector ``W x`` is ``N(0, I_m)``, and for
    fixed ``p, q`` the pairs ``(w_k^T p, w_k^T q)`` over the columns ``w_k`` of
    ``W`` are i.i.d. bivariate normal with covariance ``[[p.p, p.q], [p.q,
    q.q]] / d``.

Bound checks are one-sided with a slack of three binomial standard errors;
target checks are two-sided with per-check tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError
from .model import activation_pattern
from .numerics import chi_square_tail_bound, make_rng, spectral_norm

DEFAULT_CONSTANTS = {
    "c2": 1.0 / 64.0,
    "bernstein_c": 1.0 / 8.0,
    "margin_threshold": 1.0 / 32.0,
    "eps_over_k": 0.25,
    "mean_tol": 0.01,
    "var_rtol": 0.15,
    "required_frequency": 0.99,
    "slack_se": 3.0,
}

SAMPLERS = ("full", "reduced")

# doubles per chunk when materializing batches of full Gaussian matrices
_CHUNK_DOUBLES = 1 << 22


@dataclass(frozen=True)
class TrialBatch:
    d: int
    m: int
    trials: int
    base_seed: int = 0
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ValueError("d and m must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        merged = {**DEFAULT_CONSTANTS, **(self.constants or {})}
        for key in ("c2", "bernstein_c", "margin_threshold", "eps_over_k"):
            if not merged[key] > 0:
                raise ValueError(f"constant {key} must be positive, got {merged[key]}")
        object.__setattr__(self, "constants", merged)

    def rng(self):
        return make_rng(self.base_seed)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one check.

    ``kind`` fixes the pass semantics: ``target`` (two-sided within
    ``tolerance``), ``lower_bound`` (empirical >= target - slack),
    ``upper_bound`` (empirical <= target + slack), ``frequency`` (empirical >=
    target, no slack), ``identity`` (empirical <= target) or ``report`` (no
    requirement; ``passed`` is None).
    """

    name: str
    empirical: float
    target: float
    kind: str
    passed: bool | None
    trials: int
    stderr: float
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "empirical": float(self.empirical),
            "target": float(self.target),
            "kind": self.kind,
            "passed": self.passed,
            "trials": int(self.trials),
            "stderr": float(self.stderr),
            "tolerance": float(self.tolerance),
            **{f"details.{k}": v for k, v in sorted(self.details.items())},
        }


def _freq_se(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _lower_bound_result(name, hits, trials, bound, slack_se, details=None):
    freq = float(np.mean(hits))
    se = _freq_se(freq, trials)
    return CheckResult(name, freq, bound, "lower_bound", bool(freq >= bound - slack_se * se),
                       trials, se, slack_se * se, details or {})


def _check_sampler(sampler):
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")


def _chunks(trials, per_trial):
    size = max(1, _CHUNK_DOUBLES // max(per_trial, 1))
    start = 0
    while start < trials:
        stop = min(trials, start + size)
        yield stop - start
        start = stop


def bilinear_gaussian_form(p, q, d, rng):
    """Exact draws of ``(W^T p) . (W^T q)`` for ``W`` with i.i.d. ``N(0, 1/d)`` entries.

    ``p`` and ``q`` are ``(batch, m)``; one independent ``W`` per row.
    """
    pp = np.einsum("bi,bi->b", p, p)
    pq = np.einsum("bi,bi->b", p, q)
    qq = np.einsum("bi,bi->b", q, q)
    g1 = rng.standard_normal((p.shape[0], d))
    g2 = rng.standard_normal((p.shape[0], d))
    sp = np.sqrt(pp)
    along = np.divide(pq, sp, out=np.zeros_like(pq), where=sp > 0)
    perp = np.sqrt(np.maximum(qq - along**2, 0.0))
    u = sp[:, None] * g1
    v = along[:, None] * g1 + perp[:, None] * g2
    return np.einsum("bk,bk->b", u, v) / d


def _full_bilinear(p, q, d, rng):
    B, m = p.shape
    W = rng.standard_normal((B, m, d)) / math.sqrt(d)
    return np.einsum("bk,bk->b", np.einsum("bmd,bm->bd", W, p), np.einsum("bmd,bm->bd", W, q))


def _bilinear(p, q, d, rng, sampler):
    return _full_bilinear(p, q, d, rng) if sampler == "full" else bilinear_gaussian_form(p, q, d, rng)


def stated_independent_variance(d, m):
    """Variance target ``5/(4m) + 1/d + 2/(md)`` used for the pass decision."""
    return 5.0 / (4.0 * m) + 1.0 / d + 2.0 / (m * d)


def exact_independent_variance(d, m):
    """Exact ``Var(a^T W W^T D a)`` for independent Bernoulli(1/2) ``D``.

    Conditioning on ``(a, D)`` with ``A = ||a||^2`` and ``B = ||D a||^2`` gives
    mean ``B`` and variance ``(A B + B^2) / d``; averaging yields
    ``5/(4m) + 3/(4d) + 9/(4md)``, below the stated target by about ``1/(4d)``.
    """
    return 5.0 / (4.0 * m) + 3.0 / (4.0 * d) + 9.0 / (4.0 * m * d)


def mc_independent_moments(tb, sampler="full"):
    """Mean and variance of ``a^T W W^T D a`` with ``D`` independent Bernoulli(1/2).

    Targets are ``1/2`` and :func:`stated_independent_variance`; the exact
    variance is reported alongside in ``details``.
    """
    _check_sampler(sampler)
    d, m, c = tb.d, tb.m, tb.constants
    rng = tb.rng()
    stats = []
    for B in _chunks(tb.trials, m * d if sampler == "full" else 2 * d):
        a = rng.standard_normal((B, m)) / math.sqrt(m)
        D = rng.random((B, m)) < 0.5
        stats.append(_bilinear(a, a * D, d, rng, sampler))
    s = np.concatenate(stats)
    n = s.size
    mean = float(np.mean(s))
    var = float(np.var(s, ddof=1)) if n > 1 else 0.0
    var_target = stated_independent_variance(d, m)
    mean_se = math.sqrt(var / n)
    fourth = float(np.mean((s - mean) ** 4))
    var_se = math.sqrt(max(fourth - var**2, 0.0) / n)
    mean_res = CheckResult("independent_D_mean", mean, 0.5, "target", abs(mean - 0.5) < c["mean_tol"],
                           n, mean_se, c["mean_tol"], {"sampler": sampler})
    var_tol = c["var_rtol"] * var_target
    var_res = CheckResult("independent_D_variance", var, var_target, "target", abs(var - var_target) <= var_tol,
                          n, var_se, var_tol,
                          {"sampler": sampler, "exact_variance": exact_independent_variance(d, m)})
    return mean_res, var_res


def conditioning_split(p, x):
    """The two terms of the split of ``a^T W W^T D_x a`` along ``x``, and the direct value.

    Uses ``P_x = x x^T / d`` (valid because ``||x|| = sqrt(d)``) and
    ``W_perp = W (I - P_x)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d,):
        raise DimensionMismatchError(f"x must have shape ({p.d},), got {x.shape}")
    norm = float(np.linalg.norm(x))
    if not math.isclose(norm, math.sqrt(p.d), rel_tol=1e-9):
        raise ValueError(f"split needs ||x|| = sqrt(d) = {math.sqrt(p.d):.6g}, got {norm:.6g}")
    W, a = p.W, p.a
    Da = activation_pattern(p, x) * a
    h = W @ x
    on_x = (a @ h) * (h @ Da) / p.d
    W_perp = W - np.outer(h, x) / p.d
    off_x = (a @ W_perp) @ (W_perp.T @ Da)
    direct = (a @ W) @ (W.T @ Da)
    return float(on_x), float(off_x), float(direct)


def conditioning_split_residual(p, x):
    """Absolute residual of the split identity; zero up to rounding."""
    on_x, off_x, direct = conditioning_split(p, x)
    return abs(direct - on_x - off_x)


def _conditioned_x(tb, x, rng):
    if x is None:
        x = rng.standard_normal(tb.d)
        return x * (math.sqrt(tb.d) / np.linalg.norm(x))
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tb.d,):
        raise DimensionMismatchError(f"x must have shape ({tb.d},)")
    norm = float(np.linalg.norm(x))
    if norm == 0:
        raise ValueError("x is the zero vector")
    if not math.isclose(norm, math.sqrt(tb.d), rel_tol=1e-9):
        raise ValueError("x must satisfy ||x|| = sqrt(d)")
    return x


def _hidden_draws(tb, x, rng, sampler, B):
    if sampler == "reduced":
        return rng.standard_normal((B, tb.m))
    W = rng.standard_normal((B, tb.m, tb.d)) / math.sqrt(tb.d)
    return W @ x


def check_h_norm_tail(tb, x=None, sampler="reduced"):
    """Frequency of ``||W x||^2 < 2m`` against ``1 - e^{-m/7}``."""
    _check_sampler(sampler)
    rng = tb.rng()
    x = _conditioned_x(tb, x, rng)
    m = tb.m
    hits = []
    for B in _chunks(tb.trials, m * tb.d if sampler == "full" else m):
        h = _hidden_draws(tb, x, rng, sampler, B)
        hits.append(np.einsum("bi,bi->b", h, h) < 2 * m)
    bound = 1.0 - math.exp(-m / 7.0)
    # the exponent is taken negative so the bound is a probability
    details = {"sampler": sampler, "chi2_bound": 1.0 - chi_square_tail_bound(2.0, m, "upper"),
               "sign_corrected_exponent": True}
    return _lower_bound_result("h_norm_tail", np.concatenate(hits), tb.trials, bound,
                               tb.constants["slack_se"], details)


def check_inner_product_tail(tb, x=None, sampler="reduced"):
    """Frequencies of ``|a^T h| < sqrt(c2 d)`` and ``|a^T D_x h| < sqrt(c2 d)``.

    Both are compared with ``1 - e^{-m/7} - 4 e^{-c2 d / 4}``.
    """
    _check_sampler(sampler)
    c2 = tb.constants["c2"]
    rng = tb.rng()
    x = _conditioned_x(tb, x, rng)
    d, m = tb.d, tb.m
    thr = math.sqrt(c2 * d)
    plain, masked = [], []
    for B in _chunks(tb.trials, m * d if sampler == "full" else 2 * m):
        h = _hidden_draws(tb, x, rng, sampler, B)
        a = rng.standard_normal((B, m)) / math.sqrt(m)
        ah = np.einsum("bi,bi->b", a, h)
        aDh = np.einsum("bi,bi->b", a, np.maximum(h, 0.0))  # D_x h = relu(h)
        plain.append(np.abs(ah) < thr)
        masked.append(np.abs(aDh) < thr)
    bound = 1.0 - math.exp(-m / 7.0) - 4.0 * math.exp(-c2 * d / 4.0)
    details = {"sampler": sampler, "threshold": thr, "c2": c2, "sign_corrected_exponent": True}
    slack = tb.constants["slack_se"]
    return (
        _lower_bound_result("inner_product_a_h", np.concatenate(plain), tb.trials, bound, slack, details),
        _lower_bound_result("inner_product_a_Dh", np.concatenate(masked), tb.trials, bound, slack, details),
    )


def margin_statistic(p, X):
    """``a^T W W^T D_x a`` for each row of ``X`` (the unsigned margin at initialization)."""
    Da = activation_pattern(p, X) * p.a
    return (Da @ p.W) @ (p.a @ p.W)


def check_margin_threshold(tb, identity_D=False):
    """Frequency of ``a^T W W^T D_x a > 1/32`` with the true activation pattern.

    A pass requirement (frequency >= ``required_frequency``) only applies for
    ``d >= 512`` and ``m >= 2048``; smaller problems are reported only.
    ``identity_D`` replaces ``D_x`` by ``I`` (the statistic is then ``||W^T a||^2``).
    """
    d, m, c = tb.d, tb.m, tb.constants
    rng = tb.rng()
    thr = c["margin_threshold"]
    stats = []
    for B in _chunks(tb.trials, m * d):
        W = rng.standard_normal((B, m, d)) / math.sqrt(d)
        a = rng.standard_normal((B, m)) / math.sqrt(m)
        x = rng.standard_normal((B, d))
        x *= (math.sqrt(d) / np.linalg.norm(x, axis=1))[:, None]
        h = np.einsum("bmd,bd->bm", W, x)
        Da = a if identity_D else a * (h > 0)
        stats.append(np.einsum("bd,bd->b", np.einsum("bmd,bm->bd", W, a), np.einsum("bmd,bm->bd", W, Da)))
    s = np.concatenate(stats)
    freq = float(np.mean(s > thr))
    se = _freq_se(freq, s.size)
    in_regime = d >= 512 and m >= 2048
    required = c["required_frequency"]
    name = "margin_threshold_identity_D" if identity_D else "margin_threshold"
    return CheckResult(name, freq, required if in_regime else float("nan"),
                       "frequency" if in_regime else "report",
                       bool(freq >= required) if in_regime else None, s.size, se, 0.0,
                       {"threshold": thr, "mean_statistic": float(np.mean(s)), "min_statistic": float(np.min(s))})


def bernstein_bound(eps_over_k, n_terms, c):
    """``2 exp(-c min(t^2, t) N)`` with ``t = eps / K``."""
    t = eps_over_k
    return min(1.0, 2.0 * math.exp(-c * min(t * t, t) * n_terms))


def cross_term_draws(tb, sampler="full"):
    """Draws of ``a^T (I - D) W W^T D a`` and the per-trial scale ``K``."""
    _check_sampler(sampler)
    d, m = tb.d, tb.m
    rng = tb.rng()
    vals, scales = [], []
    for B in _chunks(tb.trials, m * d if sampler == "full" else 2 * d):
        a = rng.standard_normal((B, m)) / math.sqrt(m)
        D = rng.random((B, m)) < 0.5
        on, off = a * D, a * ~D
        vals.append(_bilinear(off, on, d, rng, sampler))
        scales.append(2.0 * np.linalg.norm(off, axis=1) * np.linalg.norm(on, axis=1) / (math.pi * d))
    return np.concatenate(vals), np.concatenate(scales)


def check_subexp_sum_tail(tb, sampler="full"):
    """Sub-exponential checks of the cross term ``sum_k (w_k^T a_off)(w_k^T a_on)``.

    Returns three results: the Bernstein domination ``P{|S| >= eps d} <= bound``
    at ``eps = eps_over_k * K``; the end-to-end event ``|S| <= 1/32`` with the
    required frequency; and centering (mean within 3 standard errors of 0).
    """
    c = tb.constants
    vals, K = cross_term_draws(tb, sampler)
    n = vals.size
    t = c["eps_over_k"]
    exceed = np.abs(vals) >= t * K * tb.d
    freq = float(np.mean(exceed))
    se = _freq_se(freq, n)
    bound = bernstein_bound(t, tb.d, c["bernstein_c"])
    slack = c["slack_se"] * se
    bern = CheckResult("bernstein_cross_term", freq, bound, "upper_bound", bool(freq <= bound + slack),
                       n, se, slack, {"sampler": sampler, "eps_over_k": t, "c": c["bernstein_c"]})
    thr = c["margin_threshold"]
    within = float(np.mean(np.abs(vals) <= thr))
    required = c["required_frequency"]
    cross = CheckResult("cross_term_within_threshold", within, required, "frequency", bool(within >= required),
                        n, _freq_se(within, n), 0.0,
                        {"sampler": sampler, "threshold": thr, "std": float(np.std(vals))})
    mean = float(np.mean(vals))
    mse = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    centered = CheckResult("cross_term_centered", mean, 0.0, "target", bool(abs(mean) <= c["slack_se"] * mse),
                           n, mse, c["slack_se"] * mse, {"sampler": sampler})
    return bern, cross, centered


@dataclass(frozen=True)
class NTKTerms:
    """The eight terms of ``a^T W W*^T D* a*`` expanded around the initialization."""

    terms: tuple
    total: float
    direct: float
    flips: int
    dW_spectral: float
    da_norm: float

    @property
    def leading(self):
        return self.terms[0]

    @property
    def residual(self):
        return abs(self.total - self.direct)

    def to_dict(self):
        return {
            **{f"term_{i + 1}": float(t) for i, t in enumerate(self.terms)},
            "total": self.total,
            "direct": self.direct,
            "flips": self.flips,
            "dW_spectral": self.dW_spectral,
            "da_norm": self.da_norm,
        }


def ntk_expansion_terms(p0, p1, x):
    """Expand ``<W^T a, grad_x f(x; W*, a*)>`` into its eight terms.

    Terms in order: leading, ``dW``, ``dD``, ``da``, ``dW dD``, ``dW da``,
    ``dD da``, ``dW dD da`` (each with the unperturbed ``a^T W`` in front).
    """
    if p0.W.shape != p1.W.shape:
        raise DimensionMismatchError(f"parameter shapes differ: {p0.W.shape} vs {p1.W.shape}")
    x = np.asarray(x, dtype=np.float64)
    W, a = p0.W, p0.a
    dW, da = p1.W - W, p1.a - a
    D = activation_pattern(p0, x).astype(np.float64)
    dD = activation_pattern(p1, x).astype(np.float64) - D
    aW = a @ W
    aWdW = aW @ dW.T
    aWW = aW @ W.T
    terms = (
        aWW @ (D * a),
        aWdW @ (D * a),
        aWW @ (dD * a),
        aWW @ (D * da),
        aWdW @ (dD * a),
        aWdW @ (D * da),
        aWW @ (dD * da),
        aWdW @ (dD * da),
    )
    terms = tuple(float(t) for t in terms)
    direct = float((aW @ p1.W.T) @ ((D + dD) * p1.a))
    return NTKTerms(
        terms=terms,
        total=math.fsum(terms),
        direct=direct,
        flips=int(np.count_nonzero(dD)),
        dW_spectral=spectral_norm(dW, tol=1e-12) if np.any(dW) else 0.0,
        da_norm=float(np.linalg.norm(da)),
    )


def ntk_expansion_table(p0, p1, X):
    """Vectorized :func:`ntk_expansion_terms` over the rows of ``X``.

    Returns a dict with ``terms`` of shape (8, n), per-sample ``total`` (fsum),
    ``direct`` and ``flips``, and the scalars ``dW_spectral`` and ``da_norm``.
    """
    if p0.W.shape != p1.W.shape:
        raise DimensionMismatchError(f"parameter shapes differ: {p0.W.shape} vs {p1.W.shape}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W, a = p0.W, p0.a
    dW, da = p1.W - W, p1.a - a
    D = activation_pattern(p0, X).astype(np.float64)
    dD = activation_pattern(p1, X).astype(np.float64) - D
    aW = a @ W
    aWdW = aW @ dW.T
    aWW = aW @ W.T
    T = np.stack([
        (D * a) @ aWW,
        (D * a) @ aWdW,
        (dD * a) @ aWW,
        (D * da) @ aWW,
        (dD * a) @ aWdW,
        (D * da) @ aWdW,
        (dD * da) @ aWW,
        (dD * da) @ aWdW,
    ])
    return {
        "terms": T,
        "total": np.array([math.fsum(col) for col in T.T]),
        "direct": ((D + dD) * p1.a) @ (aW @ p1.W.T),
        "flips": np.count_nonzero(dD, axis=1),
        "dW_spectral": spectral_norm(dW, tol=1e-12) if np.any(dW) else 0.0,
        "da_norm": float(np.linalg.norm(da)),
    }


def max_sparsity(m):
    return int(math.floor(m / math.log(m) ** 2)) if m > 1 else 0


def check_sparse_vector_bound(tb, sparsity, sampler="reduced"):
    """Frequency of ``|a^T W W^T u| <= 2 ||u||`` over random unit ``sparsity``-sparse ``u``.

    Pass requires frequency >= ``required_frequency`` when ``m >= 2048``.
    """
    _check_sampler(sampler)
    d, m, c = tb.d, tb.m, tb.constants
    if sparsity < 0 or sparsity > max_sparsity(m):
        raise ValueError(f"sparsity must lie in [0, {max_sparsity(m)}] for m={m}")
    rng = tb.rng()
    stats, unorms = [], []
    for B in _chunks(tb.trials, m * d if sampler == "full" else 2 * d + m):
        a = rng.standard_normal((B, m)) / math.sqrt(m)
        u = np.zeros((B, m))
        if sparsity:
            for b in range(B):
                support = rng.choice(m, size=sparsity, replace=False)
                vals = rng.standard_normal(sparsity)
                u[b, support] = vals / np.linalg.norm(vals)
        stats.append(_bilinear(a, u, d, rng, sampler))
        unorms.append(np.linalg.norm(u, axis=1))
    s, un = np.concatenate(stats), np.concatenate(unorms)
    freq = float(np.mean(np.abs(s) <= 2.0 * un))
    se = _freq_se(freq, s.size)
    in_regime = m >= 2048
    required = c["required_frequency"]
    return CheckResult("sparse_vector_bound", freq, required if in_regime else float("nan"),
                       "frequency" if in_regime else "report",
                       bool(freq >= required) if in_regime else None, s.size, se, 0.0,
                       {"sampler": sampler, "sparsity": sparsity, "max_abs_statistic": float(np.max(np.abs(s)))})


def check_chi_square_tail(tb, z, side):
    """Empirical chi-square tail with ``dof = tb.d`` against the analytic bound."""
    dof = tb.d
    bound = chi_square_tail_bound(z, dof, side)
    rng = tb.rng()
    hits = []
    for B in _chunks(tb.trials, dof):
        g = rng.standard_normal((B, dof))
        X = np.einsum("bi,bi->b", g, g)
        hits.append(X < z * dof if side == "lower" else X > z * dof)
    h = np.concatenate(hits)
    freq = float(np.mean(h))
    se = _freq_se(freq, h.size)
    slack = tb.constants["slack_se"] * se
    return CheckResult(f"chi2_{side}_tail_dof{dof}_z{z:g}", freq, bound, "upper_bound", bool(freq <= bound + slack),
                       h.size, se, slack, {"dof": dof, "z": z, "side": side})

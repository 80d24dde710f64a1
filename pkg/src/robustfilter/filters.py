"""Spectral filtering estimators for robust mean and covariance.

Every filter follows the same recipe: look at the top eigendirection of a
moment matrix, stop if it is not inflated, otherwise project onto it and
throw away the points whose one-dimensional deviation breaks a tail bound.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import Estimate, FilterConfig, GaussianParams, Retained, rng_stream
from .spectral import (
    FourthMomentOperator,
    inverse_sqrt,
    sharpen,
    top_eigenpair_lenient,
    variance_of_quadratic,
)

logger = logging.getLogger(__name__)

NAIVE_PRUNE_EXACT_MAX = 4000
NAIVE_PRUNE_REFERENCE = 2000


class FilterStuckWarning(RuntimeWarning):
    """The spectral test failed but no tail violation was found."""


# ---------------------------------------------------------------------------
# Tail bounds


def tail_subgaussian(T, d, epsilon, tau, nu=1.0, C2=1.0):
    """``8 exp(-C2 T^2 / 2nu) + 8 eps / (T^2 max(1, log(d log(d/(eps tau)))))``."""
    T = np.asarray(T, dtype=float)
    first = 8.0 * np.exp(-C2 * T * T / (2.0 * nu))
    if epsilon <= 0:
        return first
    inner = d * math.log(max(d / (epsilon * tau), math.e))
    denom = max(1.0, math.log(inner))
    with np.errstate(divide="ignore"):
        return first + 8.0 * epsilon / (T * T * denom)


def tail_covariance(T, epsilon):
    """``1`` for ``T <= 10 log(1/eps)``, else ``eps / (T^2 log^2 T)``."""
    T = np.asarray(T, dtype=float)
    cutoff = 10.0 * math.log(1.0 / epsilon)
    with np.errstate(divide="ignore", invalid="ignore"):
        active = epsilon / (T * T * np.log(T) ** 2)
    out = np.where(T <= cutoff, 1.0, active)
    return out if out.ndim else float(out)


def tail_exponential(T, epsilon, C1=1.0, C2=1.0):
    """``C1 exp(-C2 T) + eps / (T^2 max(1, log T)^2)``."""
    T = np.asarray(T, dtype=float)
    with np.errstate(divide="ignore"):
        second = epsilon / (T * T * np.maximum(1.0, np.log(np.maximum(T, 1.0))) ** 2)
    return C1 * np.exp(-C2 * T) + second


@dataclass(frozen=True)
class TailFunction:
    """A univariate tail bound ``T -> [0, inf)``, nonincreasing in ``T``.

    ``kind`` is one of ``"subgaussian"``, ``"covariance"``, ``"exponential"``
    or ``"custom"`` (``func`` is then called with ``(T, C2)``).
    """

    kind: str
    epsilon: float = 0.0
    d: int = 1
    tau: float = 0.1
    nu: float = 1.0
    C1: float = 1.0
    C2: float = 1.0
    func: Callable | None = None

    def __call__(self, T):
        if self.kind == "subgaussian":
            return tail_subgaussian(T, self.d, self.epsilon, self.tau, self.nu, self.C2)
        if self.kind == "covariance":
            return tail_covariance(T, self.epsilon)
        if self.kind == "exponential":
            return tail_exponential(T, self.epsilon, self.C1, self.C2)
        if self.kind == "custom":
            return self.func(np.asarray(T, dtype=float), self.C2)
        raise ValueError(f"unknown tail kind {self.kind!r}")

    def with_c2(self, C2: float) -> TailFunction:
        return replace(self, C2=C2)


# ---------------------------------------------------------------------------
# One-dimensional helpers


def robust_center(values, mode: str = "mean") -> float:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("robust_center needs at least one value")
    if mode == "mean":
        return float(values.mean())
    if mode == "median":
        return float(np.median(values))
    raise ValueError(f"unknown centering mode {mode!r}")


def find_violation_threshold(values, center, delta, tail, t_min: float = 0.0):
    """Smallest ``T > t_min`` with ``Pr[|x - center| > T + delta] > tail(T)``.

    Candidates sit halfway between consecutive distinct deviations, so each
    candidate cuts off exactly the points at or beyond one observed
    deviation. Returns ``None`` when the empirical tail never beats the bound.
    """
    dev = np.abs(np.asarray(values, dtype=float).ravel() - center)
    n = dev.size
    if n == 0:
        raise ValueError("values must be nonempty")
    levels = np.unique(dev)[::-1]  # distinct deviations, descending
    # exceedance mass of every point with deviation >= levels[k]
    counts = np.searchsorted(np.sort(dev), levels, side="left")
    mass = (n - counts) / n
    lower = np.append(levels[1:], 0.0)
    cuts = (levels + lower) / 2.0
    T = cuts - delta
    ok = T > t_min
    if not ok.any():
        return None
    with np.errstate(over="ignore", invalid="ignore"):
        bound = np.asarray(tail(T[ok]), dtype=float)
    hits = np.flatnonzero(mass[ok] > bound)
    if hits.size == 0:
        return None
    return float(T[ok][hits[-1]])


# ---------------------------------------------------------------------------
# NaivePrune


def naive_prune(X, tau: float, nu: float = 1.0, rng=None) -> np.ndarray:
    """Indices of points with at least half the sample within the pruning radius.

    The radius is ``2 sqrt(2 nu d log(2nd/tau))``. Above
    ``NAIVE_PRUNE_EXACT_MAX`` rows the neighbour fraction is measured
    against a seeded reference subsample instead of all pairs.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("naive_prune needs at least two points")
    radius = 2.0 * math.sqrt(2.0 * nu * d * math.log(2.0 * n * d / tau))
    if n <= NAIVE_PRUNE_EXACT_MAX:
        ref = X
    else:
        rng = rng if rng is not None else rng_stream(0, 0)
        ref = X[np.sort(rng.choice(n, NAIVE_PRUNE_REFERENCE, replace=False))]
    sq_ref = np.einsum("ij,ij->i", ref, ref)
    keep = np.empty(n, dtype=bool)
    r2 = radius * radius
    for start in range(0, n, 2048):
        block = X[start:start + 2048]
        sq = np.einsum("ij,ij->i", block, block)
        dist2 = sq[:, None] + sq_ref[None, :] - 2.0 * block @ ref.T
        near = np.count_nonzero(dist2 <= r2, axis=1)
        keep[start:start + 2048] = 2 * near >= ref.shape[0]
    return np.flatnonzero(keep)


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass
class FilterDiagnostics:
    n_initial: int = 0
    iterations: int = 0
    removed_per_iteration: list = field(default_factory=list)
    removed_inliers: int | None = None
    removed_outliers: int | None = None
    final_spectral_norm: float = float("nan")
    thresholds_used: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    pruned: int = 0
    stuck: bool = False
    hit_max_iterations: bool = False
    spectral_unconverged: int = 0

    @property
    def n_retained(self) -> int:
        return self.n_initial - sum(self.removed_per_iteration)

    def to_dict(self) -> dict:
        out = {
            "n_initial": self.n_initial,
            "n_retained": self.n_retained,
            "iterations": self.iterations,
            "removed_per_iteration": [int(r) for r in self.removed_per_iteration],
            "removed_inliers": self.removed_inliers,
            "removed_outliers": self.removed_outliers,
            "final_spectral_norm": float(self.final_spectral_norm),
            "thresholds_used": [[float(x) for x in t] for t in self.thresholds_used],
            "probes": [[[float(c), float(f)] for c, f in p] for p in self.probes],
            "pruned": self.pruned,
            "stuck": self.stuck,
            "hit_max_iterations": self.hit_max_iterations,
            "spectral_unconverged": self.spectral_unconverged,
        }
        return out


# ---------------------------------------------------------------------------
# Step analyses. Each one does the spectral work once; ``outcome(c2)`` then
# applies the tail test, so adaptive search can probe many C2 cheaply.


@dataclass
class _StepAnalysis:
    n: int
    spectral_norm: float
    converged: bool = True
    estimate: object = None
    values: np.ndarray | None = None
    center: float = 0.0
    delta: float = 0.0
    tail: TailFunction | None = None
    t_min: float = 0.0
    strict_inside: bool = False
    cache: dict = field(default_factory=dict)

    def outcome(self, c2: float):
        if self.estimate is not None:
            return Estimate(self.estimate)
        if c2 in self.cache:
            return self.cache[c2]
        T = find_violation_threshold(
            self.values, self.center, self.delta, self.tail.with_c2(c2), self.t_min
        )
        if T is None:
            result = None
        else:
            dev = np.abs(self.values - self.center)
            keep = dev < T if self.strict_inside else dev <= T + self.delta
            result = Retained(np.flatnonzero(keep), threshold=T, c2=c2)
        self.cache[c2] = result
        return result


def _analyze_mean_subgaussian(X, cfg: FilterConfig, rng=None) -> _StepAnalysis:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n <= d:
        warnings.warn(f"sub-gaussian filter with n={n} <= d={d}", RuntimeWarning, stacklevel=3)
    rng = rng if rng is not None else rng_stream(cfg.seed, 1)
    mu = X.mean(axis=0)
    centered = X - mu
    sigma = centered.T @ centered / n
    sigma[np.diag_indices(d)] -= 1.0
    pair = top_eigenpair_lenient(sigma, tol=cfg.eig_tol, max_iter=cfg.eig_max_iter, rng=rng)
    lam = abs(pair.value)
    thres = cfg.c_thres * cfg.epsilon * math.log(1.0 / cfg.epsilon)
    if lam <= thres:
        return _StepAnalysis(n, lam, pair.converged, estimate=mu)
    values = X @ pair.vector
    return _StepAnalysis(
        n,
        lam,
        pair.converged,
        values=values,
        center=robust_center(values, cfg.centering),
        delta=3.0 * math.sqrt(cfg.epsilon * lam),
        tail=TailFunction("subgaussian", cfg.epsilon, d, cfg.tau, cfg.nu),
    )


def covariance_null_edge(n: int, d: int) -> float:
    """Approximate top of the variance-ratio spectrum on ``n`` clean Gaussian samples.

    The symmetric ``d x d`` matrices form a ``d(d+1)/2``-dimensional space,
    so the Marchenko-Pastur edge with aspect ratio ``d(d+1)/2n`` applies.
    """
    return (1.0 + math.sqrt(d * (d + 1) / (2.0 * n))) ** 2


def _analyze_covariance(X, cfg: FilterConfig, rng=None) -> _StepAnalysis:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n <= d:
        warnings.warn(f"covariance filter with n={n} <= d={d}", RuntimeWarning, stacklevel=3)
    rng = rng if rng is not None else rng_stream(cfg.seed, 2)
    second = X.T @ X / n
    root = inverse_sqrt(second)
    Y = X @ root
    mahal = np.einsum("ij,ij->i", Y, Y)
    far = mahal >= cfg.cov_c * d * math.log(n / cfg.tau)
    if far.any():
        result = _StepAnalysis(n, float("nan"))
        result.cache[None] = Retained(np.flatnonzero(~far), threshold=float("nan"))
        return result

    op = FourthMomentOperator(Y)
    pair = top_eigenpair_lenient(
        op, op.k, method=cfg.eig_method, tol=cfg.eig_tol, max_iter=cfg.eig_max_iter, rng=rng,
        bound=op.norm_bound(), psd=True,  # whitened: w.Tw is the variance of y'Wy
    )
    V = sharpen(pair.vector)
    p = (op.quadratic_values(V) - np.trace(V)) / math.sqrt(2.0)
    # pair.value is the empirical variance of sqrt(2) p; compare p's own
    # variance with its variance under N(0, second).
    empirical = pair.value / 2.0
    gaussian = variance_of_quadratic(V)
    limit = 1.0 + cfg.cov_c_gap * cfg.epsilon * math.log(1.0 / cfg.epsilon) ** 2
    if cfg.cov_edge_correction:
        limit *= covariance_null_edge(n, d)
    ratio = empirical / gaussian if gaussian > 0 else math.inf
    if empirical <= limit * gaussian:
        return _StepAnalysis(n, ratio, pair.converged,
                             estimate=GaussianParams(np.zeros(d), (second + second.T) / 2))
    if cfg.cov_tail == "weakened":
        tail = TailFunction("covariance", cfg.epsilon)
    else:
        tail = TailFunction("exponential", cfg.epsilon, C1=cfg.cov_c1)
    return _StepAnalysis(
        n,
        ratio,
        pair.converged,
        values=p,
        center=float(np.median(p)),
        delta=cfg.cov_slack,
        tail=tail,
        t_min=cfg.resolved_t_floor(),
        strict_inside=True,
    )


def _covariance_outcome(analysis: _StepAnalysis, c2: float):
    if None in analysis.cache:
        return analysis.cache[None]
    return analysis.outcome(c2)


def filter_mean_subgaussian_step(X, cfg: FilterConfig, rng=None):
    """One round of the sub-gaussian mean filter.

    Returns :class:`Estimate` with the sample mean, or :class:`Retained`
    with the indices of the kept rows. When the spectral test fails but no
    tail violation exists a :class:`FilterStuckWarning` is issued and the
    current sample mean is returned.
    """
    analysis = _analyze_mean_subgaussian(X, cfg, rng)
    result = analysis.outcome(cfg.c2_initial)
    if result is None:
        warnings.warn(
            f"filter stuck: spectral norm {analysis.spectral_norm:.4g} above threshold "
            "but no tail violation", FilterStuckWarning, stacklevel=2)
        return Estimate(np.asarray(X, dtype=float).mean(axis=0))
    return result


filter_mean_subgaussian_step.analyze = _analyze_mean_subgaussian


def filter_covariance_step(X, cfg: FilterConfig, rng=None):
    """One round of the Gaussian covariance filter on mean-zero samples."""
    analysis = _analyze_covariance(X, cfg, rng)
    result = _covariance_outcome(analysis, cfg.c2_initial)
    if result is None:
        warnings.warn(
            f"filter stuck: variance ratio {analysis.spectral_norm:.4g} above threshold "
            "but no tail violation", FilterStuckWarning, stacklevel=2)
        X = np.asarray(X, dtype=float)
        return Estimate(GaussianParams(np.zeros(X.shape[1]), X.T @ X / X.shape[0]))
    return result


filter_covariance_step.analyze = _analyze_covariance


def filter_mean_second_moment_step(X, rng=None, threshold: float = 9.0):
    """One round of the randomized-threshold filter (covariance bounded by I).

    Returns the sample mean when the top eigenvalue of the sample covariance
    is at most ``threshold``; otherwise cuts at ``Z * max |v·(x - mean)|``
    with ``Z`` drawn from density ``2z`` on [0, 1].
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    rng = rng if rng is not None else rng_stream(0, 3)
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / n
    pair = top_eigenpair_lenient(cov, rng=rng, psd=True)
    if pair.value <= threshold:
        return Estimate(mu)
    dev = np.abs(centered @ pair.vector)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    T = math.sqrt(u) * dev.max()
    return Retained(np.flatnonzero(dev < T), threshold=T)


# ---------------------------------------------------------------------------
# Adaptive tail bounding


def adaptive_filter(step, X, cfg: FilterConfig, rng=None, probes: list | None = None):
    """Search C2 until one filter round removes between eps/2 and 3eps/2 of the points.

    Larger C2 means a smaller tail bound and therefore more removals. Without
    a bracket the search halves or doubles C2 within ``[c2_min, c2_max]``;
    once bracketed it bisects geometrically. At most ``cfg.max_probes``
    probes are made; each ``(C2, removed fraction)`` pair is appended to
    ``probes``.

    ``step`` is a step function; steps exposing ``analyze`` reuse one
    spectral computation across probes.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if probes is None:
        probes = []
    analyze = getattr(step, "analyze", None)
    if analyze is not None:
        analysis = analyze(X, cfg, rng)

        def run(c2):
            return _covariance_outcome(analysis, c2)
    else:
        analysis = None

        def run(c2):
            return step(X, replace(cfg, c2_initial=c2), rng)

    lo_target, hi_target = cfg.epsilon / 2.0, 3.0 * cfg.epsilon / 2.0
    c2 = cfg.c2_initial
    too_many, too_few = None, None  # c2 values bracketing the target
    best = None
    for _ in range(cfg.max_probes):
        result = run(c2)
        if isinstance(result, Estimate):
            return result
        removed = 0 if result is None else n - result.indices.size
        frac = removed / n
        probes.append((c2, frac))
        if result is not None:
            if best is None or abs(frac - cfg.epsilon) < abs(best[0] - cfg.epsilon):
                best = (frac, result)
            if lo_target <= frac <= hi_target:
                return result
        if frac > hi_target:
            too_many = c2 if too_many is None else min(too_many, c2)
        else:
            too_few = c2 if too_few is None else max(too_few, c2)
        if too_many is not None and too_few is not None:
            nxt = math.sqrt(too_many * too_few)
        elif too_many is not None:
            nxt = max(c2 / 2.0, cfg.c2_min)
        else:
            nxt = min(c2 * 2.0, cfg.c2_max)
        if nxt == c2:
            break
        c2 = nxt
    if best is not None:
        return best[1]
    return None


# ---------------------------------------------------------------------------
# Iterated filters


def _count_removed(diag: FilterDiagnostics, labels, before, after):
    if labels is None:
        return
    removed = np.setdiff1d(before, after, assume_unique=True)
    out = int(np.count_nonzero(labels[removed]))
    diag.removed_outliers = (diag.removed_outliers or 0) + out
    diag.removed_inliers = (diag.removed_inliers or 0) + removed.size - out


def _iterate(X, cfg: FilterConfig, step, labels, idx, diag, rng, finalize):
    """Run ``step`` (adaptive C2 when configured) until it yields an estimate.

    Returns ``(estimate, retained_indices)``.
    """
    for _ in range(cfg.max_iterations):
        sub = X[idx]
        analysis = step.analyze(sub, cfg, rng)
        diag.spectral_unconverged += 0 if analysis.converged else 1
        diag.final_spectral_norm = analysis.spectral_norm
        if analysis.estimate is not None:
            return analysis.estimate, idx
        if None in analysis.cache:
            result = analysis.cache[None]
        elif cfg.adaptive:
            trail = []
            result = adaptive_filter(_Prepared(analysis), sub, cfg, rng, trail)
            diag.probes.append(trail)
        else:
            result = analysis.outcome(cfg.c2_initial)
        if result is None:
            diag.stuck = True
            warnings.warn(
                f"filter stuck after {diag.iterations} iterations: statistic "
                f"{analysis.spectral_norm:.4g} above threshold but no tail violation",
                FilterStuckWarning, stacklevel=3)
            return finalize(sub), idx
        new_idx = idx[result.indices]
        if new_idx.size >= idx.size:
            raise AssertionError("a filter round must remove at least one point")
        _count_removed(diag, labels, idx, new_idx)
        diag.removed_per_iteration.append(idx.size - new_idx.size)
        diag.thresholds_used.append((result.threshold, analysis.delta, result.c2))
        diag.iterations += 1
        idx = new_idx
    diag.hit_max_iterations = True
    warnings.warn(f"filter hit max_iterations={cfg.max_iterations}", FilterStuckWarning, stacklevel=3)
    return finalize(X[idx]), idx


class _Prepared:
    """Adapter so :func:`adaptive_filter` reuses an existing analysis."""

    def __init__(self, analysis):
        self._analysis = analysis

    def analyze(self, X, cfg, rng=None):
        return self._analysis


def _start(X, labels):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {X.shape}")
    labels = None if labels is None else np.asarray(labels, dtype=bool)
    diag = FilterDiagnostics(n_initial=X.shape[0])
    if labels is not None:
        diag.removed_inliers = diag.removed_outliers = 0
    return X, labels, diag


def filter_mean_subgaussian(X, cfg: FilterConfig, labels=None, prune: bool = True):
    """Robust mean of a sub-gaussian with identity covariance.

    Runs :func:`naive_prune` once, then iterates the sub-gaussian filter.
    Returns ``(mean, diagnostics, retained_indices)``.
    """
    X, labels, diag = _start(X, labels)
    idx = np.arange(X.shape[0])
    if prune and X.shape[0] >= 2:
        kept = naive_prune(X, cfg.tau, cfg.nu, rng_stream(cfg.seed, 4))
        _count_removed(diag, labels, idx, kept)
        diag.pruned = idx.size - kept.size
        if diag.pruned:
            diag.removed_per_iteration.append(diag.pruned)
        idx = kept
    rng = rng_stream(cfg.seed, 1)
    mean, idx = _iterate(X, cfg, filter_mean_subgaussian_step, labels, idx, diag, rng,
                         lambda sub: sub.mean(axis=0))
    return mean, diag, idx


def filter_covariance(X, cfg: FilterConfig, labels=None):
    """Robust covariance of a mean-zero Gaussian.

    Returns ``(GaussianParams, diagnostics, retained_indices)``.
    """
    X, labels, diag = _start(X, labels)
    idx = np.arange(X.shape[0])
    rng = rng_stream(cfg.seed, 2)

    def finalize(sub):
        return GaussianParams(np.zeros(sub.shape[1]), sub.T @ sub / sub.shape[0])

    params, idx = _iterate(X, cfg, filter_covariance_step, labels, idx, diag, rng, finalize)
    return params, diag, idx


def filter_mean_second_moment(X, epsilon: float, sigma: float = 1.0, cfg: FilterConfig | None = None,
                              labels=None, rng=None, threshold: float = 9.0):
    """Robust mean when the covariance is bounded by ``sigma^2 I``.

    Samples are divided by ``sigma``, filtered until the top eigenvalue of
    the sample covariance is at most ``threshold`` and the mean is scaled
    back. ``epsilon`` is only validated; the randomized cut does not use it.
    Returns ``(mean, diagnostics, retained_indices)``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0.0 <= epsilon < 0.5:
        raise ValueError("epsilon must lie in [0, 1/2)")
    X, labels, diag = _start(X, labels)
    if rng is None:
        rng = rng_stream(cfg.seed if cfg is not None else 0, 3)
    scaled = X / sigma
    idx = np.arange(X.shape[0])
    limit = X.shape[0] if cfg is None else min(X.shape[0], cfg.max_iterations)
    for _ in range(limit):
        if idx.size < 2:
            break
        result = filter_mean_second_moment_step(scaled[idx], rng, threshold)
        if isinstance(result, Estimate):
            return result.value * sigma, diag, idx
        new_idx = idx[result.indices]
        _count_removed(diag, labels, idx, new_idx)
        diag.removed_per_iteration.append(idx.size - new_idx.size)
        diag.thresholds_used.append((result.threshold * sigma, 0.0, float("nan")))
        diag.iterations += 1
        idx = new_idx
    diag.hit_max_iterations = True
    return scaled[idx].mean(axis=0) * sigma, diag, idx

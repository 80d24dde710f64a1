"""Comparison estimators: empirical, pruning, geometric median and RANSAC."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.stats import chi2

from .spectral import SingularMatrixError, inverse_sqrt


def _matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a nonempty 2D array, got shape {X.shape}")
    return X


def empirical_mean(X) -> np.ndarray:
    return _matrix(X).mean(axis=0)


def empirical_cov(X, assume_zero_mean: bool = False) -> np.ndarray:
    """Covariance normalized by ``n``; the raw second moment when ``assume_zero_mean``."""
    X = _matrix(X)
    if not assume_zero_mean:
        X = X - X.mean(axis=0)
    C = X.T @ X / X.shape[0]
    return (C + C.T) / 2


def prune_then_estimate(X, epsilon: float | None = None, target: str = "mean"):
    """Drop obviously far points, then use the empirical estimator.

    ``mean``: drop points farther than ``2 sqrt(d log n)`` from the
    coordinatewise median. ``cov``: drop points with squared norm above
    ``4 d log n`` (data assumed mean-zero). ``epsilon`` is accepted for a
    uniform signature and unused.
    """
    X = _matrix(X)
    n, d = X.shape
    if n < 2:
        raise ValueError("pruning needs at least two points")
    if target == "mean":
        radius = 2.0 * math.sqrt(d * math.log(n))
        keep = np.linalg.norm(X - np.median(X, axis=0), axis=1) <= radius
    elif target == "cov":
        keep = np.einsum("ij,ij->i", X, X) <= 4.0 * d * math.log(n)
    else:
        raise ValueError(f"unknown target {target!r}")
    if not keep.any():
        raise ValueError("pruning removed every point")
    kept = X[keep]
    return kept.mean(axis=0) if target == "mean" else empirical_cov(kept, assume_zero_mean=True)


def _weiszfeld_objective(X, m) -> float:
    return float(np.linalg.norm(X - m, axis=1).sum())


def geometric_median(X, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Weiszfeld iteration with the Vardi-Zhang fix for iterates on a data point."""
    X = _matrix(X)
    if X.shape[0] == 1:
        return X[0].copy()
    # iterate on centered data so the result is translation-equivariant up to rounding
    shift = X.mean(axis=0)
    X = X - shift
    m = np.zeros(X.shape[1])
    best, best_obj = m, _weiszfeld_objective(X, m)
    for _ in range(max_iter):
        dist = np.linalg.norm(X - m, axis=1)
        on_point = dist < 1e-12
        w = np.zeros_like(dist)
        w[~on_point] = 1.0 / dist[~on_point]
        T = (w[:, None] * X).sum(axis=0) / w.sum()
        eta = int(on_point.sum())
        if eta:
            R = (w[:, None] * (X - m)).sum(axis=0)
            r = float(np.linalg.norm(R))
            # stay on the data point when it is optimal
            step = 1.0 if r == 0.0 else max(0.0, 1.0 - eta / r)
            new = (1.0 - step) * m + step * T
        else:
            new = T
        obj = _weiszfeld_objective(X, new)
        if obj < best_obj:
            best, best_obj = new, obj
        if np.linalg.norm(new - m) < tol:
            return best + shift
        m = new
    warnings.warn(f"geometric median did not converge in {max_iter} iterations", RuntimeWarning,
                  stacklevel=2)
    return best + shift


def ransac_mean(X, epsilon: float | None = None, trials: int = 100, rng=None) -> np.ndarray:
    """Best of ``trials`` means of random ``d+1``-subsets by inlier count within ``2 sqrt(d)``."""
    X = _matrix(X)
    n, d = X.shape
    if n <= d:
        raise ValueError(f"RANSAC mean needs n > d, got n={n}, d={d}")
    rng = np.random.default_rng(0) if rng is None else rng
    radius = 2.0 * math.sqrt(d)
    best_count, best_mask = -1, None
    for _ in range(trials):
        center = X[rng.choice(n, size=d + 1, replace=False)].mean(axis=0)
        mask = np.linalg.norm(X - center, axis=1) <= radius
        count = int(mask.sum())
        if count > best_count:  # strict: earliest round wins ties
            best_count, best_mask = count, mask
    if best_count == 0:
        return X.mean(axis=0)
    return X[best_mask].mean(axis=0)


def ransac_mve_cov(X, epsilon: float | None = None, trials: int = 100, rng=None) -> np.ndarray:
    """Minimum-volume-ellipsoid search over random subset covariances.

    Each round fits the zero-mean covariance of ``d(d+1)/2`` random points
    and inflates it until it covers ``h = n - floor(eps n)`` points; the
    smallest such ellipsoid wins. The result is the empirical covariance
    of the points with Mahalanobis norm ``<= sqrt(2d)`` under the winner,
    calibrated to the Gaussian. Rounds with a singular subset are skipped.
    """
    X = _matrix(X)
    n, d = X.shape
    size = d * (d + 1) // 2
    if n <= size:
        raise ValueError(f"RANSAC covariance needs n > d(d+1)/2 = {size}, got n={n}")
    size = max(size, d)
    rng = np.random.default_rng(0) if rng is None else rng
    eps = 0.1 if epsilon is None else float(epsilon)
    h = n - int(math.floor(eps * n))
    best_score, best = math.inf, None
    for _ in range(trials):
        sub = X[rng.choice(n, size=size, replace=False)]
        C = sub.T @ sub / size
        try:
            root = inverse_sqrt(C)
        except SingularMatrixError:
            continue
        Y = X @ root
        m2 = np.einsum("ij,ij->i", Y, Y)
        s = float(np.partition(m2, h - 1)[h - 1])
        if s <= 0.0:
            continue
        score = float(np.linalg.slogdet(C)[1]) + d * math.log(s)
        if score < best_score:  # strict: earliest round wins ties
            best_score, best = score, (C * s / chi2.ppf(h / n, d))
    if best is None:
        return empirical_cov(X, assume_zero_mean=True)
    Y = X @ inverse_sqrt(best)
    mask = np.einsum("ij,ij->i", Y, Y) <= 2.0 * d
    if mask.sum() <= d:
        return best
    return empirical_cov(X[mask], assume_zero_mean=True)

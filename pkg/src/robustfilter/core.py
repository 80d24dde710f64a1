"""Shared types, error metrics, good-set checks and seeded random streams."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.stats import norm

SPECTRAL_TOL = 1e-9


class InputError(ValueError):
    """Malformed user input (bad CSV row, wrong shape, ...)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class SampleSet:
    """An ``n x d`` sample matrix with optional outlier labels.

    ``labels[i]`` is True when row ``i`` was planted by the adversary.
    """

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data.reshape(-1, 1)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InputError(f"expected a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("samples must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool).ravel()
            if labels.shape[0] != data.shape[0]:
                raise InputError(
                    f"{labels.shape[0]} labels for {data.shape[0]} rows"
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def inliers(self) -> np.ndarray:
        """Rows labeled as inliers; requires labels."""
        return self.data[~self.require_labels()]

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError("this operation needs a labeled SampleSet")
        return self.labels

    def subset(self, indices) -> SampleSet:
        labels = None if self.labels is None else self.labels[indices]
        return SampleSet(self.data[indices], labels)


@dataclass(frozen=True)
class FilterConfig:
    """Tunable parameters shared by every filter.

    The ``cov_*`` fields only affect the covariance filter. ``cov_t_floor=None``
    resolves to ``max(10 log(1/eps), 1.01 e)`` and ``cov_tail="weakened"``
    uses the piecewise ``eps / (T^2 log^2 T)`` bound; ``"exponential"`` is the
    ``C1 exp(-C2 T)`` form used with adaptive tail bounding. With
    ``cov_edge_correction`` the covariance stopping threshold is multiplied
    by ``(1 + sqrt(d(d+1)/2n))^2``, the bulk edge a clean sample of size
    ``n`` already reaches. ``eig_method="lanczos"`` finds the covariance
    filter's top eigenpair with ARPACK instead of power iteration; both are
    matrix-free.
    """

    epsilon: float
    tau: float = 0.1
    nu: float = 1.0
    centering: str = "mean"
    adaptive: bool = False
    c2_initial: float = 1.0
    c2_min: float = 2.0 ** -10
    c2_max: float = 2.0 ** 10
    max_iterations: int = 1000
    max_probes: int = 20
    spectral_tol: float = SPECTRAL_TOL
    eig_tol: float = 1e-7
    eig_max_iter: int = 1000
    eig_method: str = "power"
    seed: int = 0
    c_thres: float = 10.0
    cov_c: float = 10.0
    cov_c_gap: float = 2.0
    cov_t_floor: float | None = None
    cov_slack: float = 4.0 / 3.0
    cov_tail: str = "weakened"
    cov_c1: float = 1.0
    cov_edge_correction: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.centering not in ("mean", "median"):
            raise ValueError(f"centering must be 'mean' or 'median', got {self.centering!r}")
        if not 0.0 < self.c2_min <= self.c2_initial <= self.c2_max:
            raise ValueError("need 0 < c2_min <= c2_initial <= c2_max")
        if self.max_iterations < 1 or self.max_probes < 1:
            raise ValueError("max_iterations and max_probes must be positive")
        if self.eig_method not in ("power", "lanczos"):
            raise ValueError(f"unknown eig_method {self.eig_method!r}")
        if self.cov_tail not in ("weakened", "exponential"):
            raise ValueError(f"unknown cov_tail {self.cov_tail!r}")

    def resolved_t_floor(self) -> float:
        if self.cov_t_floor is not None:
            return self.cov_t_floor
        return max(10.0 * math.log(1.0 / self.epsilon), 1.01 * math.e)


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self, tol: float = SPECTRAL_TOL):
        cov = np.asarray(self.covariance, dtype=float)
        mean = np.asarray(self.mean, dtype=float).ravel()
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > tol * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance is not symmetric")
        lo = np.linalg.eigvalsh((cov + cov.T) / 2).min()
        if lo < -tol * max(1.0, np.abs(cov).max()):
            raise ValueError(f"covariance is not PSD (eigenvalue {lo:.3g})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class Estimate:
    """Filter step finished: ``value`` is a mean vector or GaussianParams."""

    value: Union[np.ndarray, GaussianParams]


@dataclass(frozen=True)
class Retained:
    """Filter step removed points; ``indices`` index into the step's input."""

    indices: np.ndarray
    threshold: float = float("nan")
    c2: float = float("nan")


FilterStepOutcome = Union[Estimate, Retained]


@dataclass
class ExperimentRow:
    dimension: int
    method: str
    excess_error: float
    wall_time: float
    seed: int
    trial: int = 0
    error: float = float("nan")
    oracle_error: float = float("nan")
    failure: str | None = None
    n_outliers: int | None = None
    diagnostics: dict | None = None


# ---------------------------------------------------------------------------
# Error metrics


def l2_error(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if estimate.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.linalg.norm(estimate - truth))


def mahalanobis_error(estimate, truth, tol: float = SPECTRAL_TOL) -> float:
    """Return ``||truth^{-1/2} estimate truth^{-1/2} - I||_F``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape or truth.ndim != 2 or truth.shape[0] != truth.shape[1]:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    w, U = np.linalg.eigh((truth + truth.T) / 2)
    if w.min() <= tol * max(1.0, w.max()):
        raise np.linalg.LinAlgError(
            f"truth covariance is singular (smallest eigenvalue {w.min():.3g})"
        )
    root = (U / np.sqrt(w)) @ U.T
    diff = root @ estimate @ root - np.eye(truth.shape[0])
    return float(np.linalg.norm(diff, "fro"))


# ---------------------------------------------------------------------------
# Good-set checks


@dataclass
class ConditionResult:
    passed: bool
    measured: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.measured


@dataclass
class GoodSetReport:
    conditions: dict[str, ConditionResult] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def __getitem__(self, key: str) -> ConditionResult:
        return self.conditions[key]


def _tail_denominator(d: int, epsilon: float, tau: float) -> float:
    # log(d log(d/(eps tau))) is <= 0 for tiny arguments; clamp at 1.
    inner = d * math.log(max(d / (epsilon * tau), math.e))
    return max(1.0, math.log(inner))


def default_directions(X: np.ndarray, mu, n_top: int = 10, n_random: int = 100, seed: int = 0) -> np.ndarray:
    """Top eigenvectors of the second-moment matrix plus seeded random unit vectors."""
    d = X.shape[1]
    centered = X - mu
    M = centered.T @ centered / X.shape[0]
    _, U = np.linalg.eigh(M)
    top = U[:, ::-1][:, : min(n_top, d)].T
    rand = rng_stream(seed, 0).standard_normal((n_random, d))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    return np.vstack([top, rand])


def check_good_set_mean(
    S,
    mu_g,
    epsilon: float,
    tau: float,
    directions=None,
    radius_const: float = 2.0,
    t_grid: Sequence[float] | None = None,
    seed: int = 0,
) -> GoodSetReport:
    """Check the four regularity conditions of an (epsilon, tau)-good set.

    Condition (ii) compares empirical and Gaussian halfspace tails only along
    ``directions`` (default: see :func:`default_directions`) and at the
    thresholds in ``t_grid``.
    """
    X = S.data if isinstance(S, SampleSet) else np.atleast_2d(np.asarray(S, dtype=float))
    if isinstance(S, SampleSet) and S.labels is not None and S.labels.any():
        raise ValueError("good-set checks apply to uncorrupted samples only")
    n, d = X.shape
    mu_g = np.asarray(mu_g, dtype=float).ravel()
    report = GoodSetReport()

    radius = radius_const * math.sqrt(d * math.log(max(n / tau, math.e)))
    far = float(np.linalg.norm(X - mu_g, axis=1).max())
    report.conditions["i"] = ConditionResult(far <= radius, far, radius)

    if directions is None:
        directions = default_directions(X, mu_g, seed=seed)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if t_grid is None:
        t_grid = np.geomspace(0.25, 8.0, 16)
    t_grid = np.asarray(t_grid, dtype=float)
    proj = (X - mu_g) @ directions.T
    denom = _tail_denominator(d, epsilon, tau)
    worst = -math.inf
    for T in t_grid:
        emp = (proj >= T).mean(axis=0)
        gap = np.abs(emp - norm.sf(T)).max()
        # compare as a ratio to the T-dependent bound so one number summarizes the grid
        worst = max(worst, gap * T * T * denom / epsilon)
    report.conditions["ii"] = ConditionResult(worst <= 1.0, worst, 1.0)

    mean_gap = l2_error(X.mean(axis=0), mu_g)
    report.conditions["iii"] = ConditionResult(mean_gap <= epsilon, mean_gap, epsilon)

    centered = X - mu_g
    M = centered.T @ centered / n
    dev = float(np.abs(np.linalg.eigvalsh(M - np.eye(d))).max())
    report.conditions["iv"] = ConditionResult(dev <= epsilon, dev, epsilon)
    return report


def check_good_set_second_moment(S, mu_p, epsilon: float) -> GoodSetReport:
    X = S.data if isinstance(S, SampleSet) else np.atleast_2d(np.asarray(S, dtype=float))
    mu_p = np.asarray(mu_p, dtype=float).ravel()
    report = GoodSetReport()
    gap = l2_error(X.mean(axis=0), mu_p)
    report.conditions["mean"] = ConditionResult(gap <= math.sqrt(epsilon), gap, math.sqrt(epsilon))
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    top = float(np.linalg.eigvalsh(cov).max())
    report.conditions["covariance"] = ConditionResult(top <= 2.0, top, 2.0)
    return report


# ---------------------------------------------------------------------------
# Randomness


def rng_stream(seed: int, stream_id: int | Sequence[int] = 0) -> np.random.Generator:
    """Deterministic generator for ``(seed, stream_id)``.

    Distinct stream ids give statistically independent streams.
    """
    key = (stream_id,) if isinstance(stream_id, (int, np.integer)) else tuple(stream_id)
    key = tuple(int(k) & 0xFFFFFFFFFFFFFFFF for k in key)
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


# ---------------------------------------------------------------------------
# CSV serialization


def write_csv(path, S: SampleSet, with_labels: bool | None = None) -> None:
    if with_labels is None:
        with_labels = S.is_labeled
    with open(path, "w", newline="") as fh:
        for i, row in enumerate(S.data):
            cells = [format(v, ".17g") for v in row]
            if with_labels:
                cells.append("1" if S.require_labels()[i] else "0")
            fh.write(",".join(cells) + "\n")


def read_csv(path, labeled: bool = False) -> SampleSet:
    """Read a headerless CSV; with ``labeled`` the last column is the 0/1 outlier flag."""
    rows, labels = [], []
    width = None
    with open(Path(path), newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise InputError(f"expected {width} columns, got {len(cells)}", lineno)
            if labeled:
                flag = cells[-1].strip()
                if flag not in ("0", "1"):
                    raise InputError(f"label must be 0 or 1, got {flag!r}", lineno)
                labels.append(flag == "1")
                cells = cells[:-1]
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise InputError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise InputError("non-finite value", lineno)
            rows.append(values)
    if not rows or (labeled and width < 2):
        raise InputError(f"{path}: no samples")
    return SampleSet(np.array(rows), np.array(labels) if labeled else None)

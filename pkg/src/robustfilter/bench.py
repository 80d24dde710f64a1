"""Synthetic benchmark sweeps: dimension x method x trial, reporting excess error."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import baselines
from .adversary import InlierModel, NoiseModel, corrupt, haar_rotation
from .core import ExperimentRow, FilterConfig, l2_error, mahalanobis_error, rng_stream
from .filters import filter_covariance, filter_mean_second_moment, filter_mean_subgaussian

logger = logging.getLogger(__name__)

MEAN_METHODS = ("filter", "empirical", "pruning", "geometric_median", "ransac")
COV_METHODS = ("filter", "empirical", "pruning", "ransac")
EXTRA_MEAN_METHODS = ("second_moment",)
# filters accept labels, used only to count removed inliers and outliers
LABEL_AWARE = ("filter", "second_moment")

# Constants that make the filters effective at desk scale. The theoretical
# defaults in FilterConfig are valid but loose (see the decisions ledger).
PRACTICAL_MEAN = dict(c_thres=0.5)
PRACTICAL_COV = dict(cov_tail="exponential", cov_t_floor=1.0, cov_slack=0.0, cov_c_gap=0.25,
                     cov_edge_correction=True, eig_method="lanczos")


@dataclass
class ExperimentConfig:
    task: str = "mean"
    dims: list = field(default_factory=lambda: [25, 50, 100])
    epsilon: float = 0.1
    samples: str | int = "rule"
    inliers: str = "gaussian"
    noise: str = "hypercube_mixture"
    methods: list = field(default_factory=lambda: list(MEAN_METHODS))
    trials: int = 10
    seed: int = 0
    centering: str = "mean"
    adaptive: bool = False
    spike_scale: float = 10.0
    constants: str = "practical"
    ransac_trials: int = 100

    def __post_init__(self):
        if self.task not in ("mean", "cov"):
            raise ValueError(f"task must be 'mean' or 'cov', got {self.task!r}")
        self.dims = [int(d) for d in self.dims]
        if not self.dims or any(b <= a for a, b in zip(self.dims, self.dims[1:])):
            raise ValueError("dims must be nonempty and strictly ascending")
        if min(self.dims) < 1:
            raise ValueError("dimensions must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 1/2)")
        if self.constants not in ("practical", "theory"):
            raise ValueError("constants must be 'practical' or 'theory'")
        known = MEAN_METHODS + EXTRA_MEAN_METHODS if self.task == "mean" else COV_METHODS
        unknown = [m for m in self.methods if m not in known]
        if unknown:
            raise ValueError(f"unknown methods for task {self.task}: {unknown}")
        if self.samples != "rule" and int(self.samples) < 2:
            raise ValueError("need at least two samples")

    @classmethod
    def for_task(cls, task: str, **overrides) -> ExperimentConfig:
        """Desk-scale defaults for ``mean`` or ``cov``."""
        if task == "cov":
            base = dict(task="cov", dims=[10, 20, 30], epsilon=0.05, noise="all_zeros",
                        methods=list(COV_METHODS))
        else:
            base = dict(task="mean")
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def n_samples(self, d: int) -> int:
        if self.samples != "rule":
            return int(self.samples)
        if self.epsilon == 0:
            raise ValueError("the default sample rule (n = c d / eps^2) needs epsilon > 0")
        factor = 10.0 if self.task == "mean" else 0.5
        return int(round(factor * d / self.epsilon ** 2))

    def filter_config(self, seed: int) -> FilterConfig:
        extra = {}
        if self.constants == "practical":
            extra = PRACTICAL_MEAN if self.task == "mean" else PRACTICAL_COV
        # FilterConfig needs a positive epsilon; at zero the spectral
        # threshold collapses and the filter only acts on tail violations.
        eps = self.epsilon if self.epsilon > 0 else 1e-6
        return FilterConfig(epsilon=eps, centering=self.centering, adaptive=self.adaptive,
                            seed=seed, **extra)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> ExperimentConfig:
        return cls(**cfg)


@dataclass
class Instance:
    """One generated dataset with its ground truth."""

    X: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    cov: np.ndarray


def make_instance(cfg: ExperimentConfig, d: int, trial: int) -> Instance:
    """Data for cell ``(d, trial)``; noise rotations are fixed per dimension."""
    n = cfg.n_samples(d)
    if cfg.task == "cov" and cfg.noise == "skewed_product_rotated":
        inliers = InlierModel.spiked_gaussian(d, cfg.spike_scale)
    elif cfg.inliers == "heavy_tail":
        inliers = InlierModel("heavy_tail", d)
    else:
        inliers = InlierModel("gaussian", d)
    rotation = None
    if cfg.noise == "skewed_product_rotated":
        rotation = haar_rotation(d, rng_stream(cfg.seed, (d, 0)))
    noise = NoiseModel.from_dict({"kind": cfg.noise, "rotation": rotation}, d=d)
    S = corrupt(inliers, noise, n, cfg.epsilon, rng_stream(cfg.seed, (d, 1, trial)))
    return Instance(np.array(S.data), np.array(S.labels), inliers.mean, inliers.cov)


def _mean_method(name: str, cfg: ExperimentConfig, seed: int) -> Callable:
    fcfg = cfg.filter_config(seed)
    if name == "filter":
        return lambda X, labels: filter_mean_subgaussian(X, fcfg, labels)[:2]
    if name == "second_moment":
        return lambda X, labels: filter_mean_second_moment(X, fcfg.epsilon, 1.0, fcfg, labels)[:2]
    if name == "empirical":
        return baselines.empirical_mean
    if name == "pruning":
        return lambda X: baselines.prune_then_estimate(X, cfg.epsilon, "mean")
    if name == "geometric_median":
        return baselines.geometric_median
    if name == "ransac":
        return lambda X: baselines.ransac_mean(X, cfg.epsilon, cfg.ransac_trials, rng_stream(seed, 5))
    raise ValueError(name)


def _cov_method(name: str, cfg: ExperimentConfig, seed: int) -> Callable:
    fcfg = cfg.filter_config(seed)
    if name == "filter":
        def run(X, labels):
            params, diag, _ = filter_covariance(X, fcfg, labels)
            return params.covariance, diag
        return run
    if name == "empirical":
        return lambda X: baselines.empirical_cov(X, assume_zero_mean=True)
    if name == "pruning":
        return lambda X: baselines.prune_then_estimate(X, cfg.epsilon, "cov")
    if name == "ransac":
        return lambda X: baselines.ransac_mve_cov(X, cfg.epsilon, cfg.ransac_trials, rng_stream(seed, 6))
    raise ValueError(name)


def cell_seed(cfg: ExperimentConfig, d: int, trial: int) -> int:
    """Integer seed handed to the methods of cell ``(d, trial)``."""
    return int(rng_stream(cfg.seed, (d, 2, trial)).integers(2 ** 31))


def run_cell(cfg: ExperimentConfig, inst: Instance, d: int, trial: int, method: str) -> ExperimentRow:
    seed = cell_seed(cfg, d, trial)
    good = inst.X[~inst.labels]
    if cfg.task == "mean":
        fn = _mean_method(method, cfg, seed)
        metric = l2_error
        oracle = metric(good.mean(axis=0), inst.mean)
    else:
        fn = _cov_method(method, cfg, seed)
        metric = mahalanobis_error
        oracle = metric(good.T @ good / good.shape[0], inst.cov)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = fn(inst.X, inst.labels) if method in LABEL_AWARE else fn(inst.X)
        diag = None
        if isinstance(est, tuple):
            est, diag = est
        err = metric(est, inst.mean if cfg.task == "mean" else inst.cov)
        failure = None
    except Exception as exc:  # one bad cell must not abort the sweep
        logger.warning("d=%d trial=%d %s failed: %s", d, trial, method, exc)
        err, failure, diag = float("nan"), f"{type(exc).__name__}: {exc}", None
    wall = time.perf_counter() - start
    return ExperimentRow(d, method, err - oracle, wall, seed, trial, err, oracle, failure,
                         n_outliers=int(inst.labels.sum()),
                         diagnostics=None if diag is None else diag.to_dict())


def run_bench(cfg: ExperimentConfig, progress: Callable | None = None) -> list[ExperimentRow]:
    rows = []
    for d in cfg.dims:
        for trial in range(cfg.trials):
            inst = make_instance(cfg, d, trial)
            for method in cfg.methods:
                row = run_cell(cfg, inst, d, trial, method)
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def average_excess(rows: list[ExperimentRow]) -> dict:
    """``{method: {d: mean excess over successful trials}}``."""
    out: dict = {}
    for r in rows:
        if r.failure is None:
            out.setdefault(r.method, {}).setdefault(r.dimension, []).append(r.excess_error)
    return {m: {d: float(np.mean(v)) for d, v in sorted(cells.items())}
            for m, cells in sorted(out.items())}


def write_outputs(cfg: ExperimentConfig, rows: list[ExperimentRow], out_dir) -> list[Path]:
    """Write ``<method>.dat`` tables, ``summary.json`` and ``timings.json``.

    Everything except ``timings.json`` is a deterministic function of the
    config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    means = average_excess(rows)
    for method in cfg.methods:
        path = out_dir / f"{method}.dat"
        lines = ["d err"]
        for d, err in means.get(method, {}).items():
            lines.append(f"{d} {format(err, '.17g')}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    cells = []
    for r in rows:
        cell = {k: v for k, v in asdict(r).items() if k != "wall_time"}
        cells.append(cell)
    summary = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "filter_config": asdict(cfg.filter_config(0)) | {"seed": "per cell"},
        "cells": cells,
        "mean_excess": {m: {str(d): e for d, e in v.items()} for m, v in means.items()},
        "failures": sum(r.failure is not None for r in rows),
    }
    path = out_dir / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    written.append(path)
    timings = [{"dimension": r.dimension, "method": r.method, "trial": r.trial,
                "wall_time": r.wall_time} for r in rows]
    path = out_dir / "timings.json"
    path.write_text(json.dumps(timings, indent=2) + "\n")
    written.append(path)
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj

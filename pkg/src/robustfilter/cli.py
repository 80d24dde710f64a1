"""Command line entry point: ``robustfilter {estimate,corrupt,bench,project2}``.

Exit codes: 0 success, 1 a method or filter failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines
from .adversary import InlierModel, NoiseModel, corrupt
from .bench import PRACTICAL_COV, PRACTICAL_MEAN, ExperimentConfig, run_bench, write_outputs
from .core import FilterConfig, InputError, SampleSet, read_csv, rng_stream, write_csv
from .filters import filter_covariance, filter_mean_second_moment, filter_mean_subgaussian
from .spectral import symmetric_eigh

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2

NOISE_KINDS = ("hypercube_mixture", "all_zeros", "skewed_product_rotated", "europe_product", "point_mass")

log = logging.getLogger("robustfilter")



def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _filter_config(args, task: str) -> FilterConfig:
    extra = {}
    if args.constants == "practical":
        extra = dict(PRACTICAL_COV if task == "cov" else PRACTICAL_MEAN)
    return FilterConfig(epsilon=args.epsilon, tau=args.tau, centering=args.centering,
                        adaptive=args.adaptive, seed=args.seed, **extra)


def _dump(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _estimate(X: np.ndarray, args):
    """Run the filter chosen by ``args.task``; returns ``(estimate, diagnostics)``."""
    if args.task == "mean":
        est, diag, _ = filter_mean_subgaussian(X, _filter_config(args, "mean"))
    elif args.task == "second-moment":
        est, diag, _ = filter_mean_second_moment(X, args.epsilon, args.sigma, _filter_config(args, "mean"))
    else:
        if args.center == "median":
            X = X - np.median(X, axis=0)
        params, diag, _ = filter_covariance(X, _filter_config(args, "cov"))
        est = params.covariance
    return est, diag


def cmd_estimate(args) -> int:
    S = read_csv(args.input, labeled=args.labeled)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est, diag = _estimate(np.array(S.data), args)
    result = {
        "task": args.task,
        "estimate": np.asarray(est).tolist(),
        "diagnostics": diag.to_dict(),
        "warnings": [str(w.message) for w in caught],
        "config": asdict(_filter_config(args, "cov" if args.task == "cov" else "mean")),
    }
    _dump(result, args.out)
    return EXIT_OK


def _inlier_model(args) -> InlierModel:
    if args.inliers == "spiked":
        return InlierModel.spiked_gaussian(args.d, args.spike_scale)
    return InlierModel(args.inliers, args.d)


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})", exc.lineno) from exc


def cmd_corrupt(args) -> int:
    if args.config is not None:
        # rerun from a sidecar: every parameter comes from the file
        side = _load_json(args.config)
        seed, n, d, eps = int(side["seed"]), int(side["n"]), int(side["d"]), float(side["epsilon"])
        inliers = InlierModel.from_dict(side["inliers"])
        noise = NoiseModel.from_dict(side["noise"], d=d)
    else:
        if args.d is None or args.n is None:
            raise InputError("corrupt needs --d and --n (or --config)")
        seed, n, d, eps = args.seed, args.n, args.d, args.epsilon
        noise_cfg = {"kind": args.noise, "scale": args.point_scale}
        noise = NoiseModel.from_dict(noise_cfg, d=d, rng=rng_stream(seed, 1))
        inliers = _inlier_model(args)
    S = corrupt(inliers, noise, n, eps, rng_stream(seed, 0))
    write_csv(args.out, S, with_labels=True)
    sidecar = {
        "command": "corrupt",
        "seed": seed,
        "n": n,
        "d": d,
        "epsilon": eps,
        "inliers": inliers.to_dict(),
        "noise": noise.to_dict(),
        "n_outliers": int(S.labels.sum()),
        "label_column": "last",
    }
    Path(str(args.out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.config is not None:
        side = _load_json(args.config)
        cfg = ExperimentConfig.from_dict(side.get("config", side))
        return _run_bench(cfg, args.out_dir)
    cfg = ExperimentConfig.for_task(
        args.task,
        dims=args.dims,
        epsilon=args.epsilon,
        noise=args.noise,
        methods=args.methods,
        trials=args.trials,
        seed=args.seed,
        centering=args.centering,
        adaptive=args.adaptive,
        spike_scale=args.spike_scale,
        constants=args.constants,
        samples=args.samples,
        inliers=args.inliers,
    )
    return _run_bench(cfg, args.out_dir)


def _run_bench(cfg: ExperimentConfig, out_dir) -> int:
    def progress(row):
        status = row.failure or f"excess {row.excess_error:.4g}"
        log.info("d=%d trial=%d %-16s %s", row.dimension, row.trial, row.method, status)

    rows = run_bench(cfg, progress)
    paths = write_outputs(cfg, rows, out_dir)
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_FAILURE if any(r.failure for r in rows) else EXIT_OK


def cmd_project2(args) -> int:
    S = read_csv(args.input, labeled=args.labeled)
    X = np.array(S.data)
    if X.shape[1] < 2:
        raise InputError("need at least two columns to project onto two directions")
    centered = X - np.median(X, axis=0) if args.center == "median" else X
    if args.cov_method == "filter":
        cfg = FilterConfig(epsilon=args.epsilon, adaptive=args.adaptive, seed=args.seed,
                           **(PRACTICAL_COV if args.constants == "practical" else {}))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cov = filter_covariance(centered, cfg)[0].covariance
    elif args.cov_method == "empirical":
        cov = baselines.empirical_cov(centered, assume_zero_mean=True)
    elif args.cov_method == "pruning":
        cov = baselines.prune_then_estimate(centered, args.epsilon, "cov")
    else:
        cov = baselines.ransac_mve_cov(centered, args.epsilon, 100, rng_stream(args.seed, 6))
    w, U = symmetric_eigh(cov)
    top = U[:, np.argsort(w)[::-1][:2]]
    # fix the sign so the output does not depend on the eigensolver's choice
    top = top * np.where(top[np.argmax(np.abs(top), axis=0), [0, 1]] < 0, -1.0, 1.0)
    write_csv(args.out, SampleSet(X @ top), with_labels=False)
    return EXIT_OK


def _common(p: argparse.ArgumentParser, epsilon: float | None = 0.1):
    p.add_argument("--epsilon", type=float, default=epsilon)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adaptive", action="store_true", help="adaptive tail bounding")
    p.add_argument("--constants", choices=("practical", "theory"), default="practical",
                   help="filter constants: tuned for desk-scale data, or the conservative defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustfilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="robust mean or covariance of a CSV")
    p.add_argument("input")
    p.add_argument("--task", choices=("mean", "second-moment", "cov"), default="mean")
    _common(p)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--centering", choices=("mean", "median"), default="mean")
    p.add_argument("--center", choices=("zero", "median"), default="zero",
                   help="cov task: subtract the coordinatewise median first (outside the mean-zero model)")
    p.add_argument("--labeled", action="store_true", help="last CSV column is a 0/1 label")
    p.add_argument("--out", help="JSON output path (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("corrupt", help="write an epsilon-corrupted labeled CSV")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inliers", choices=("gaussian", "heavy_tail", "spiked"), default="gaussian")
    p.add_argument("--noise", choices=NOISE_KINDS, default="hypercube_mixture")
    p.add_argument("--spike-scale", type=float, default=10.0)
    p.add_argument("--point-scale", type=float, default=10.0, help="point_mass noise: distance along e1")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="rerun from a sidecar JSON written by an earlier corrupt")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("bench", help="synthetic benchmark sweep")
    p.add_argument("--task", choices=("mean", "cov"), default="mean")
    p.add_argument("--dims", type=_ints)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--noise", choices=NOISE_KINDS)
    p.add_argument("--inliers", choices=("gaussian", "heavy_tail"))
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m])
    p.add_argument("--trials", type=int)
    p.add_argument("--samples", type=int, help="fixed n instead of n = 10 d/eps^2 (mean) or 0.5 d/eps^2 (cov)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--centering", choices=("mean", "median"), default="mean")
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--spike-scale", type=float, default=10.0)
    p.add_argument("--constants", choices=("practical", "theory"), default="practical")
    p.add_argument("--config", help="rerun from a summary.json (or a bare config JSON); other flags are ignored")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("project2", help="project onto the top two eigenvectors of a covariance estimate")
    p.add_argument("input")
    p.add_argument("--cov-method", choices=("filter", "empirical", "pruning", "ransac"), default="filter")
    _common(p, epsilon=0.05)
    p.add_argument("--center", choices=("zero", "median"), default="median")
    p.add_argument("--labeled", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project2)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        # LinAlgError derives from ValueError, so it is caught first
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        # unreadable files and bad parameter values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Epsilon-corruption of clean samples, plus the inlier and noise laws of the benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import SampleSet


def _rows(size):
    return 1 if size is None else int(size)


def _squeeze(draws, size):
    return draws[0] if size is None else draws


def sample_hypercube_mixture(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Half uniform {0,1}^d, half the spike law: (0 or 12, -2 or 0, 0, ..., 0)."""
    if d < 2:
        raise ValueError("hypercube mixture needs d >= 2")
    m = _rows(size)
    cube = rng.integers(0, 2, size=(m, d)).astype(float)
    spike = np.zeros((m, d))
    spike[:, 0] = 12.0 * rng.integers(0, 2, size=m)
    spike[:, 1] = -2.0 * rng.integers(0, 2, size=m)
    pick = rng.random(m) < 0.5
    out = np.where(pick[:, None], cube, spike)
    return _squeeze(out, size)


def haar_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def skewed_product(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Unrotated skewed noise: {-.5,0,.5} coords, 0.8*{-2..2} coords, one integer in [-100,100]."""
    if d % 2 or d < 4:
        raise ValueError("skewed covariance noise needs an even d >= 4")
    m = _rows(size)
    half = d // 2
    out = np.empty((m, d))
    out[:, :half] = 0.5 * rng.integers(-1, 2, size=(m, half))
    out[:, half:d - 1] = 0.8 * rng.integers(-2, 3, size=(m, half - 1))
    out[:, d - 1] = rng.integers(-100, 101, size=m)
    return _squeeze(out, size)


def sample_skewed_cov_noise(d: int, rotation: np.ndarray, rng: np.random.Generator, size=None) -> np.ndarray:
    draws = np.atleast_2d(skewed_product(d, rng, _rows(size))) @ np.asarray(rotation).T
    return _squeeze(draws, size)


def sample_europe_noise(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """First half uniform {0,1,2}, second half uniform {2,3}, all divided by 24."""
    if d % 2:
        raise ValueError("europe noise needs an even d")
    m = _rows(size)
    half = d // 2
    out = np.empty((m, d))
    out[:, :half] = rng.integers(0, 3, size=(m, half))
    out[:, half:] = rng.integers(2, 4, size=(m, d - half))
    return _squeeze(out / 24.0, size)


@dataclass
class InlierModel:
    """``gaussian`` (mean, cov) or ``heavy_tail`` (mean, sigma, df).

    The heavy-tail law has independent Student-t coordinates scaled to
    variance ``0.6 sigma^2``, so its covariance is strictly below ``sigma^2 I``.
    """

    kind: str
    d: int
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    sigma: float = 1.0
    df: float = 5.0

    def __post_init__(self):
        self.mean = np.zeros(self.d) if self.mean is None else np.asarray(self.mean, dtype=float).ravel()
        if self.mean.size != self.d:
            raise ValueError("mean has the wrong dimension")
        if self.kind == "gaussian":
            cov = np.eye(self.d) if self.cov is None else np.asarray(self.cov, dtype=float)
            if cov.shape != (self.d, self.d) or not np.allclose(cov, cov.T):
                raise ValueError("covariance must be a symmetric d x d matrix")
            w, U = np.linalg.eigh(cov)
            if w.min() < -1e-9 * max(1.0, w.max()):
                raise ValueError(f"covariance is not PSD (eigenvalue {w.min():.3g})")
            self.cov = cov
            self._root = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
        elif self.kind == "heavy_tail":
            if self.df <= 2:
                raise ValueError("heavy_tail needs df > 2 for a finite covariance")
            self.cov = 0.6 * self.sigma ** 2 * np.eye(self.d)
        else:
            raise ValueError(f"unknown inlier kind {self.kind!r}")

    @classmethod
    def spiked_gaussian(cls, d: int, spike: float = 10.0) -> InlierModel:
        cov = np.eye(d)
        cov[0, 0] += spike
        return cls("gaussian", d, cov=cov)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean + rng.standard_normal((n, self.d)) @ self._root
        t = rng.standard_t(self.df, size=(n, self.d))
        scale = self.sigma * np.sqrt(0.6 * (self.df - 2.0) / self.df)
        return self.mean + scale * t

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "mean": self.mean.tolist()}
        if self.kind == "gaussian":
            out["cov"] = self.cov.tolist()
        else:
            out.update(sigma=self.sigma, df=self.df)
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> InlierModel:
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        d = int(cfg.pop("d"))
        if "spike" in cfg:
            model = cls.spiked_gaussian(d, float(cfg.pop("spike")))
            if cfg.get("mean") is not None:
                model.mean = np.asarray(cfg["mean"], dtype=float)
            return model
        return cls(kind, d, **cfg)


def sample_inliers(model: InlierModel, n: int, rng: np.random.Generator) -> SampleSet:
    return SampleSet(model.sample(n, rng), np.zeros(n, dtype=bool))


@dataclass
class NoiseModel:
    """Noise law for replaced rows.

    Kinds: ``hypercube_mixture``, ``all_zeros``, ``skewed_product_rotated``
    (needs ``rotation``), ``europe_product``, ``point_mass`` (needs
    ``point``) and ``custom``, whose ``sampler(m, rng, inliers)`` may look at
    the clean draws.
    """

    kind: str
    point: np.ndarray | None = None
    rotation: np.ndarray | None = None
    sampler: Callable | None = field(default=None, repr=False)

    def sample(self, m: int, d: int, rng: np.random.Generator, inliers=None) -> np.ndarray:
        if self.kind == "hypercube_mixture":
            return sample_hypercube_mixture(d, rng, m)
        if self.kind == "all_zeros":
            return np.zeros((m, d))
        if self.kind == "skewed_product_rotated":
            if self.rotation is None:
                raise ValueError("skewed noise needs a rotation")
            return sample_skewed_cov_noise(d, self.rotation, rng, m)
        if self.kind == "europe_product":
            return sample_europe_noise(d, rng, m)
        if self.kind == "point_mass":
            return np.tile(np.asarray(self.point, dtype=float), (m, 1))
        if self.kind == "custom":
            return np.asarray(self.sampler(m, rng, inliers), dtype=float).reshape(m, d)
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.point is not None:
            out["point"] = np.asarray(self.point).tolist()
        if self.rotation is not None:
            out["rotation"] = np.asarray(self.rotation).tolist()
        return out

    @classmethod
    def from_dict(cls, cfg: dict, d: int | None = None, rng=None) -> NoiseModel:
        """Build from JSON; ``point_mass`` accepts ``scale``/``axis`` instead of a point,
        and a missing rotation is drawn from ``rng``."""
        cfg = dict(cfg)
        kind = cfg["kind"]
        point = cfg.get("point")
        if kind == "point_mass" and point is None:
            point = np.zeros(d)
            point[int(cfg.get("axis", 0))] = float(cfg.get("scale", 10.0))
        rotation = cfg.get("rotation")
        if kind == "skewed_product_rotated" and rotation is None:
            rotation = haar_rotation(d, rng)
        return cls(
            kind,
            point=None if point is None else np.asarray(point, dtype=float),
            rotation=None if rotation is None else np.asarray(rotation, dtype=float),
        )


def corrupt(inliers: InlierModel, noise: NoiseModel, m: int, epsilon: float,
            rng: np.random.Generator) -> SampleSet:
    """Draw ``m`` clean rows, replace ``Bin(m, eps)`` of them with noise, shuffle.

    ``labels`` marks replaced rows.
    """
    if not 0.0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 1/2), got {epsilon}")
    clean = inliers.sample(m, rng)
    k = int(rng.binomial(m, epsilon)) if epsilon > 0 else 0
    labels = np.zeros(m, dtype=bool)
    data = clean.copy()
    if k:
        victims = rng.choice(m, size=k, replace=False)
        data[victims] = noise.sample(k, inliers.d, rng, clean)
        labels[victims] = True
    if epsilon == 0:
        return SampleSet(data, labels)
    order = rng.permutation(m)
    return SampleSet(data[order], labels[order])

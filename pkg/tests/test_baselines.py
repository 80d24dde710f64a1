import math
import itertools
import warnings

import numpy as np
import pytest

from robustfilter.adversary import InlierModel, NoiseModel, corrupt
from robustfilter.baselines import (
    empirical_cov,
    empirical_mean,
    geometric_median,
    prune_then_estimate,
    ransac_mean,
    ransac_mve_cov,
)
from robustfilter.core import mahalanobis_error, rng_stream


def objective(X, m):
    return np.linalg.norm(X - m, axis=1).sum()


def grid_refine(X, start, width=1e-2, steps=10, rounds=6):
    """Local grid search: a (2 steps + 1)^d grid around the current best, shrunk each round."""
    best = np.array(start, dtype=float)
    d = best.size
    for _ in range(rounds):
        offsets = np.linspace(-width, width, 2 * steps + 1)
        grid = best + np.array(list(itertools.product(offsets, repeat=d)))
        vals = np.linalg.norm(X[None, :, :] - grid[:, None, :], axis=2).sum(axis=1)
        best = grid[np.argmin(vals)]
        width /= steps
    return best


class TestEmpirical:
    def test_single_point(self):
        x = np.array([[1.0, 2.0]])
        assert np.array_equal(empirical_mean(x), x[0])
        assert np.array_equal(empirical_cov(x), np.zeros((2, 2)))

    def test_zero_mean_pair(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert np.array_equal(empirical_cov(X, assume_zero_mean=True), np.diag([1.0, 0.0]))

    def test_clt_scale(self):
        X = rng_stream(0, 0).standard_normal((100_000, 5))
        assert np.abs(empirical_mean(X)).max() <= 0.02

    def test_matches_numpy(self):
        X = rng_stream(0, 1).standard_normal((50, 4))
        assert np.allclose(empirical_cov(X), np.cov(X.T, bias=True))


class TestPruning:
    def test_clean_keeps_most(self):
        X = rng_stream(1, 0).standard_normal((10_000, 20))
        radius = 2 * math.sqrt(20 * math.log(10_000))
        kept = np.linalg.norm(X - np.median(X, axis=0), axis=1) <= radius
        assert kept.mean() > 0.99
        assert np.allclose(prune_then_estimate(X, 0.1, "mean"), X[kept].mean(axis=0))
        assert (np.einsum("ij,ij->i", X, X) <= 4 * 20 * math.log(10_000)).mean() > 0.99

    def test_far_noise_removed(self):
        d = 10
        S = corrupt(InlierModel("gaussian", d), NoiseModel("point_mass", point=100 * math.sqrt(d) * np.eye(d)[0]),
                    5000, 0.1, rng_stream(1, 1))
        X = np.array(S.data)
        assert np.allclose(prune_then_estimate(X, 0.1, "mean"), X[~S.labels].mean(axis=0))
        assert np.allclose(prune_then_estimate(X, 0.1, "cov"), empirical_cov(X[~S.labels], True))

    def test_all_pruned(self):
        X = np.array([[0.0, 0.0], [1e6, 1e6]])
        with pytest.raises(ValueError):
            prune_then_estimate(X * 1e6 + 1e6, 0.1, "cov")

    def test_bad_target(self):
        with pytest.raises(ValueError):
            prune_then_estimate(np.zeros((3, 2)), 0.1, "median")


class TestGeometricMedian:
    def test_single(self):
        assert np.array_equal(geometric_median([[3.0, 4.0]]), [3.0, 4.0])

    def test_symmetric(self):
        X = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
        assert np.allclose(geometric_median(X), 0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_grid_oracle(self, seed):
        X = rng_stream(seed, 2).standard_normal((20, 3))
        m = geometric_median(X)
        ref = grid_refine(X, m)
        assert objective(X, m) <= objective(X, ref) + 1e-6
        assert objective(X, m) <= objective(X, X.mean(axis=0))

    def test_median_at_data_point(self):
        # a heavy point at the origin is the minimizer
        X = np.vstack([np.zeros((10, 2)), [[1.0, 0], [0, 1], [-1, 0]]])
        assert np.allclose(geometric_median(X), 0, atol=1e-9)

    def test_nonconvergence_warns(self):
        X = rng_stream(3, 0).standard_normal((30, 4))
        with pytest.warns(RuntimeWarning):
            geometric_median(X, tol=0.0, max_iter=3)


class TestRansac:
    def test_clean(self):
        X = rng_stream(4, 0).standard_normal((5000, 5))
        err = np.linalg.norm(ransac_mean(X, 0.1, 50, rng_stream(4, 1)))
        assert err <= 3 * np.linalg.norm(X.mean(axis=0)) + 3 * math.sqrt(5 / 5000)

    def test_deterministic(self):
        X = rng_stream(4, 2).standard_normal((500, 4))
        assert np.array_equal(ransac_mean(X, 0.1, 20, rng_stream(1, 0)), ransac_mean(X, 0.1, 20, rng_stream(1, 0)))
        A = ransac_mve_cov(X, 0.1, 20, rng_stream(1, 0))
        assert np.array_equal(A, ransac_mve_cov(X, 0.1, 20, rng_stream(1, 0)))

    def test_beats_empirical_under_far_noise(self):
        d = 5
        noise = NoiseModel("point_mass", point=50 * np.ones(d))
        S = corrupt(InlierModel("gaussian", d), noise, 3000, 0.1, rng_stream(5, 0))
        X = np.array(S.data)
        assert np.linalg.norm(ransac_mean(X, 0.1, 50, rng_stream(5, 1))) < np.linalg.norm(X.mean(axis=0))
        cov_r = ransac_mve_cov(X, 0.1, 50, rng_stream(5, 2))
        assert mahalanobis_error(cov_r, np.eye(d)) < mahalanobis_error(empirical_cov(X, True), np.eye(d))

    def test_cov_clean(self):
        X = rng_stream(6, 0).standard_normal((5000, 4))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            C = ransac_mve_cov(X, 0.1, 30, rng_stream(6, 1))
        # scoring by a Mahalanobis radius trims the tails, so C shrinks a little
        assert mahalanobis_error(C, np.eye(4)) < 1.0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            ransac_mean(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            ransac_mve_cov(np.zeros((6, 3)))


class TestTranslation:
    @pytest.mark.parametrize("name", ["empirical", "pruning", "geometric_median", "ransac"])
    def test_equivariant(self, name):
        X = rng_stream(7, 0).standard_normal((400, 3))
        c = np.array([5.0, -3.0, 2.0])
        fns = {
            "empirical": empirical_mean,
            "pruning": lambda Y: prune_then_estimate(Y, 0.1, "mean"),
            "geometric_median": geometric_median,
            "ransac": lambda Y: ransac_mean(Y, 0.1, 20, rng_stream(7, 1)),
        }
        fn = fns[name]
        assert np.allclose(fn(X + c), fn(X) + c, atol=1e-10, rtol=0)

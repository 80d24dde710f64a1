"""scikit-learn style wrappers around the filters."""

from __future__ import annotations

import numpy as np
from scipy.stats import chi2
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.covariance import EmpiricalCovariance
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .core import FilterConfig
from .filters import filter_covariance, filter_mean_second_moment, filter_mean_subgaussian


def _seed_from(random_state) -> int:
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))


class _MeanMixin(TransformerMixin):
    """Centering transform and a chi-square inlier test around ``location_``."""

    outlier_quantile = 0.999

    def transform(self, X):
        check_is_fitted(self, "location_")
        X = check_array(X)
        return X - self.location_

    def predict(self, X):
        """``+1`` for points inside the ``outlier_quantile`` ball of a unit-covariance law, else ``-1``."""
        check_is_fitted(self, "location_")
        X = check_array(X)
        sq = np.sum((X - self.location_) ** 2, axis=1) / self.scale_ ** 2
        return np.where(sq <= chi2.ppf(self.outlier_quantile, X.shape[1]), 1, -1)


class FilterMean(_MeanMixin, BaseEstimator):
    """Robust mean of a sub-gaussian sample with identity covariance.

    Fitted attributes: ``location_``, ``support_`` (bool mask of retained
    rows), ``diagnostics_`` and ``n_features_in_``.
    """

    def __init__(self, epsilon=0.1, tau=0.1, nu=1.0, centering="mean", adaptive=False,
                 c_thres=10.0, prune=True, random_state=None):
        self.epsilon = epsilon
        self.tau = tau
        self.nu = nu
        self.centering = centering
        self.adaptive = adaptive
        self.c_thres = c_thres
        self.prune = prune
        self.random_state = random_state

    def _config(self) -> FilterConfig:
        return FilterConfig(epsilon=self.epsilon, tau=self.tau, nu=self.nu,
                            centering=self.centering, adaptive=self.adaptive,
                            c_thres=self.c_thres, seed=_seed_from(self.random_state))

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        mean, diag, idx = filter_mean_subgaussian(X, self._config(), prune=self.prune)
        self.location_ = mean
        self.scale_ = np.sqrt(self.nu)
        self.support_ = np.zeros(X.shape[0], dtype=bool)
        self.support_[idx] = True
        self.diagnostics_ = diag
        self.n_features_in_ = X.shape[1]
        return self


class SecondMomentMean(_MeanMixin, BaseEstimator):
    """Robust mean when the covariance is at most ``sigma^2 I``."""

    def __init__(self, epsilon=0.1, sigma=1.0, threshold=9.0, random_state=None):
        self.epsilon = epsilon
        self.sigma = sigma
        self.threshold = threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        cfg = FilterConfig(epsilon=max(self.epsilon, 1e-12), seed=_seed_from(self.random_state))
        mean, diag, idx = filter_mean_second_moment(X, self.epsilon, self.sigma, cfg,
                                                    threshold=self.threshold)
        self.location_ = mean
        self.scale_ = float(self.sigma)
        self.support_ = np.zeros(X.shape[0], dtype=bool)
        self.support_[idx] = True
        self.diagnostics_ = diag
        self.n_features_in_ = X.shape[1]
        return self


class FilterCovariance(EmpiricalCovariance):
    """Robust covariance of a mean-zero Gaussian.

    ``center="median"`` subtracts the coordinatewise median first; this is
    a convenience outside the mean-zero model. ``predict`` flags points
    whose squared Mahalanobis distance exceeds the chi-square
    ``outlier_quantile``.
    """

    def __init__(self, epsilon=0.05, tau=0.1, adaptive=False, c_gap=2.0, tail="weakened",
                 t_floor=None, slack=4.0 / 3.0, center="zero", outlier_quantile=0.999,
                 eig_method="power", store_precision=True, random_state=None):
        super().__init__(store_precision=store_precision, assume_centered=True)
        self.epsilon = epsilon
        self.tau = tau
        self.adaptive = adaptive
        self.c_gap = c_gap
        self.tail = tail
        self.t_floor = t_floor
        self.slack = slack
        self.center = center
        self.outlier_quantile = outlier_quantile
        self.eig_method = eig_method
        self.random_state = random_state

    def _config(self) -> FilterConfig:
        return FilterConfig(epsilon=self.epsilon, tau=self.tau, adaptive=self.adaptive,
                            cov_c_gap=self.c_gap, cov_tail=self.tail, cov_t_floor=self.t_floor,
                            cov_slack=self.slack, eig_method=self.eig_method,
                            seed=_seed_from(self.random_state))

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        if self.center == "median":
            location = np.median(X, axis=0)
        elif self.center == "zero":
            location = np.zeros(X.shape[1])
        else:
            raise ValueError(f"center must be 'zero' or 'median', got {self.center!r}")
        params, diag, idx = filter_covariance(X - location, self._config())
        self._set_covariance(params.covariance)
        self.location_ = location
        self.support_ = np.zeros(X.shape[0], dtype=bool)
        self.support_[idx] = True
        self.diagnostics_ = diag
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "covariance_")
        X = check_array(X)
        dist = self.mahalanobis(X)
        return np.where(dist <= chi2.ppf(self.outlier_quantile, X.shape[1]), 1, -1)

    def transform(self, X):
        """Whiten with the fitted covariance."""
        check_is_fitted(self, "covariance_")
        X = check_array(X)
        w, U = np.linalg.eigh(self.covariance_)
        return (X - self.location_) @ (U / np.sqrt(w)) @ U.T

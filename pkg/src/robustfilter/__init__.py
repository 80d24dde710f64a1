"""Robust mean and covariance estimation by spectral filtering."""

from .adversary import InlierModel, NoiseModel, corrupt, sample_inliers
from .baselines import (
    empirical_cov,
    empirical_mean,
    geometric_median,
    prune_then_estimate,
    ransac_mean,
    ransac_mve_cov,
)
from .core import (
    Estimate,
    ExperimentRow,
    FilterConfig,
    GaussianParams,
    InputError,
    Retained,
    SampleSet,
    check_good_set_mean,
    check_good_set_second_moment,
    l2_error,
    mahalanobis_error,
    read_csv,
    rng_stream,
    write_csv,
)
from .estimators import FilterCovariance, FilterMean, SecondMomentMean
from .filters import (
    FilterDiagnostics,
    FilterStuckWarning,
    adaptive_filter,
    filter_covariance,
    filter_covariance_step,
    filter_mean_second_moment,
    filter_mean_second_moment_step,
    filter_mean_subgaussian,
    filter_mean_subgaussian_step,
    find_violation_threshold,
    naive_prune,
    robust_center,
)
from .spectral import FourthMomentOperator, inverse_sqrt, jacobi_eigh, top_eigenpair

__version__ = "0.1.0"

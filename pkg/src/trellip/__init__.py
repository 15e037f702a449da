"""Sampling and moments of truncated multivariate elliptical distributions."""

from .dgf import (
    Family,
    contaminated_normal,
    custom,
    dgf_eval,
    dgf_inverse,
    from_name,
    kotz,
    normal,
    pearson_vii,
    power_exponential,
    slash,
    student_t,
    validate_strictly_decreasing,
)
from .exceptions import (
    ConvergenceError,
    ExistenceError,
    InvalidParameterError,
    QuadratureError,
    SliceError,
    TrellipError,
)
from .moments import (
    Existence,
    MomentEstimate,
    existence_check,
    mc_moments,
    mc_moments_full,
    mc_moments_partitioned,
    omega21,
)
from .partition import conditional_params, marginal_family, split
from .rng import DEFAULT_SEED
from .sampler import Chain, TruncEllipticalSpec, acf, slice_gibbs_sample, standardize
from .scl import CensoredSpatialRegressor, SclDataset, SclFit, SclParams, fit_mcem

__version__ = "0.1.0"

__all__ = [
    "Family", "normal", "student_t", "power_exponential", "pearson_vii", "slash",
    "contaminated_normal", "kotz", "custom", "from_name", "dgf_eval", "dgf_inverse",
    "validate_strictly_decreasing",
    "TrellipError", "InvalidParameterError", "ConvergenceError", "QuadratureError",
    "SliceError", "ExistenceError",
    "TruncEllipticalSpec", "Chain", "slice_gibbs_sample", "standardize", "acf",
    "split", "marginal_family", "conditional_params",
    "Existence", "MomentEstimate", "existence_check", "omega21", "mc_moments",
    "mc_moments_full", "mc_moments_partitioned",
    "SclDataset", "SclParams", "SclFit", "fit_mcem", "CensoredSpatialRegressor",
    "DEFAULT_SEED",
]

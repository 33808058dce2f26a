"""Dirichlet process mixture clustering by collapsed Gibbs sampling.

The package provides a centralized sampler and a distributed variant in which
workers sample partitions of disjoint data shards and a master reassigns whole
local clusters using only their sufficient statistics.
"""

__version__ = "0.1.0"

from .errors import DatasetError, NumericalDegeneracyError
from .niw import (
    ModelHyperParams,
    NiwParams,
    SufficientStats,
    default_prior,
    log_marginal,
    log_posterior_predictive,
    log_prior_predictive,
    niw_posterior,
    stats_from_points,
)

__all__ = [
    "DatasetError",
    "NumericalDegeneracyError",
    "ModelHyperParams",
    "NiwParams",
    "SufficientStats",
    "default_prior",
    "log_marginal",
    "log_posterior_predictive",
    "log_prior_predictive",
    "niw_posterior",
    "stats_from_points",
    "__version__",
]

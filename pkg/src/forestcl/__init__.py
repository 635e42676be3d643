"""Conditional composite-likelihood inference for time series of tree point patterns.

Recruits follow a log-linear conditional intensity and deaths a logistic
model, each conditional on the previous census. Estimation solves
composite-likelihood score equations; uncertainty comes from a Godambe
sandwich with a truncated pair-sum variability estimate.
"""
from .core import CensusSeries, MarkedPoint, NeighborIndex, PointPattern, Window
from .errors import (ConfigError, ConvergenceError, DataError, DomainError, ForestCLError, NumericalError,
                     RankDeficiencyError)

__version__ = "0.1.0"

__all__ = [
    "CensusSeries",
    "MarkedPoint",
    "NeighborIndex",
    "PointPattern",
    "Window",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DomainError",
    "ForestCLError",
    "NumericalError",
    "RankDeficiencyError",
]

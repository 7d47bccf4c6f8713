"""Scenario-based risk assessment for image classifiers.

Populate a risk tensor R[loss, sample, distribution, draw] by Monte Carlo
simulation (:mod:`kritensor.engine`), then filter and aggregate it into key
risk indicators and a final convex-combined risk (:mod:`kritensor.kri`).
"""

from .errors import (
    BlackBoxModelError,
    ConfigError,
    DataError,
    FormatError,
    IncompleteTensorError,
    KRIError,
    NonConvergenceError,
    NumericError,
)
from .tensor import DistributionDescriptor, RiskTensor, TensorIndex

__version__ = "0.1.0"

__all__ = [
    "BlackBoxModelError",
    "ConfigError",
    "DataError",
    "DistributionDescriptor",
    "FormatError",
    "IncompleteTensorError",
    "KRIError",
    "NonConvergenceError",
    "NumericError",
    "RiskTensor",
    "TensorIndex",
]

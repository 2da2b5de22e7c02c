"""Bayesian factor models with structured loading priors.

The pieces fit together in layers: matrix-variate distributions and
truncation bounds, parametric scale families with increasing shrinkage
over columns, a stationarity-preserving reparameterization for factor
dynamics, an adaptive Gibbs sampler, and post-processing for
identification, forecasting, and predictive scoring.
"""

__version__ = "0.1.0"

from .errors import (
    NumericalError,
    PartialChainError,
    SpdError,
    ValidationError,
)

__all__ = [
    "__version__",
    "NumericalError",
    "PartialChainError",
    "SpdError",
    "ValidationError",
]

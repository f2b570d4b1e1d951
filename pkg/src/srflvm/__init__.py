"""Sparse infinite random-feature latent variable model with MCMC inference."""

from .exceptions import DataValidationError, NumericalError
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "DataValidationError",
    "NumericalError",
    "RngStream",
    "__version__",
]

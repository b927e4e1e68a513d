"""Numerics for point scatterers with random displacements on the flat torus."""

__version__ = "0.1.0"

from .errors import (CapacityError, DegenerateConfigurationError, DomainError, EmptyEnsembleError,
                     NumericError, PoleError, ScatterlabError)

__all__ = [
    "__version__",
    "ScatterlabError",
    "DomainError",
    "CapacityError",
    "PoleError",
    "NumericError",
    "DegenerateConfigurationError",
    "EmptyEnsembleError",
]

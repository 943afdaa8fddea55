"""Grid solver and geometric audits for the one-phase free-boundary problem."""

from .errors import (AuditFailure, ConfigError, DivergenceError, GeometryError, OnePhaseError,
                     ResolutionError, SpecMismatchError)
from .field import GridSpec, QField, ScalarField

__version__ = "0.1.0"

__all__ = ["GridSpec", "QField", "ScalarField", "OnePhaseError", "GeometryError",
           "ResolutionError", "SpecMismatchError", "DivergenceError", "ConfigError",
           "AuditFailure", "__version__"]

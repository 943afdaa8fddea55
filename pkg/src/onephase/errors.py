"""Exception types shared across the package."""


class OnePhaseError(Exception):
    """Base class for all package errors."""


class GeometryError(OnePhaseError, ValueError):
    """A ball, box or point falls outside the grid it is evaluated on."""


class ResolutionError(OnePhaseError, ValueError):
    """A radius or scale is too small for the grid spacing."""


class SpecMismatchError(OnePhaseError, ValueError):
    """Two fields that must share a grid do not."""


class DivergenceError(OnePhaseError, ArithmeticError):
    """The solver produced non-finite values."""


class ConfigError(OnePhaseError, ValueError):
    """A configuration violates one of its invariants."""


class AuditFailure(OnePhaseError):
    """A verification property that must hold was found violated."""

"""Exception types raised by trellip."""


class TrellipError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(TrellipError, ValueError):
    """A family or spec parameter is outside its admissible range."""


class ConvergenceError(TrellipError, RuntimeError):
    """A root finder or optimizer failed to converge."""


class QuadratureError(TrellipError, RuntimeError):
    """Numerical integration of a density generating function failed."""


class SliceError(TrellipError, RuntimeError):
    """The current state fell outside its own slice (internal logic error)."""


class ExistenceError(TrellipError, ValueError):
    """A requested truncated moment does not exist for this family and region."""

"""Exception hierarchy shared by every subpackage.

The CLI maps ``ConfigurationError`` to exit code 2 and ``DataError`` to exit
code 3; everything else is a programming error and propagates.
"""


class DriveStyleError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(DriveStyleError, ValueError):
    """Invalid parameters, budgets, or experiment settings."""


class DataError(DriveStyleError, ValueError):
    """Malformed or inconsistent input data."""


class DimensionError(DataError):
    """Tensor or matrix shapes do not conform."""


class SchemaError(DataError):
    """A required channel is missing or channel schemas disagree."""


class NumericalError(DriveStyleError, ArithmeticError):
    """A non-finite value appeared during computation."""


class GraphStateError(DriveStyleError, RuntimeError):
    """The autograd graph or optimizer is used in an invalid state."""


class UndefinedCorrelationError(DataError):
    """Correlation requested for a sequence with zero variance."""

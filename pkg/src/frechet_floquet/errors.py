"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`FloquetError`; the CLI maps the subclasses onto exit codes.
"""


class FloquetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(FloquetError, ValueError):
    """Malformed input: bad problem file, invariant violation, bad argument."""

    exit_code = 2


class ShapeError(ValidationError):
    pass


class LevelRangeError(ValidationError, IndexError):
    pass


class UsageError(ValidationError):
    pass


class NumericError(FloquetError, ArithmeticError):
    """Overflow, non-finite values or a series that fails to converge."""

    exit_code = 3


class ConditioningError(NumericError):
    """A matrix that must be inverted is numerically singular."""


class AccuracyError(NumericError):
    """Integrator error estimate above the requested tolerance."""


class VerificationError(FloquetError):
    """A computed object fails its own a-posteriori check."""

    exit_code = 4

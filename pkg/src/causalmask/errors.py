"""Exception types raised across the package."""


class CausalMaskError(Exception):
    """Base class for all package errors."""


class DimensionError(CausalMaskError, ValueError):
    pass


class InvalidTapeError(CausalMaskError, ValueError):
    pass


class ConfigError(CausalMaskError, ValueError):
    pass


class InsufficientBatchError(CausalMaskError, ValueError):
    pass


class UndefinedMetricError(CausalMaskError, ValueError):
    pass


class PoisonedGradientError(CausalMaskError, FloatingPointError):
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"non-finite gradient for parameter {name!r}")


class PoisonedLossError(CausalMaskError, FloatingPointError):
    def __init__(self, term, step=None):
        self.term = term
        self.step = step
        where = f" during step {step}" if step else ""
        super().__init__(f"non-finite loss term {term!r}{where}")


class OracleFailure(CausalMaskError, FloatingPointError):
    """Loss function handed to the finite-difference checker returned NaN/Inf."""


class FormatError(CausalMaskError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class FlagLengthMismatchError(FormatError):
    pass


class InvalidValueError(FormatError):
    pass

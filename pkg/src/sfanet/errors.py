"""Exception types raised across the package."""


class SfanetError(Exception):
    """Base class for all package errors."""


class DimensionError(SfanetError, ValueError):
    """Array extents do not agree with what an operation expects."""


class ConfigurationError(SfanetError, ValueError):
    """A configuration value violates its documented invariants."""


class ContractError(SfanetError, RuntimeError):
    """An operation was called outside its preconditions."""


class FormatError(SfanetError, ValueError):
    """A binary or JSON artifact failed validation.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CoverageError(SfanetError, ValueError):
    """A coordinate grid does not cover a requested region."""


class UndefinedCorrelationError(SfanetError, ValueError):
    """Correlation requested for a series with zero variance."""


class DegenerateScaleError(SfanetError, ValueError):
    """A normalization scale is zero."""


class NonFiniteError(SfanetError, FloatingPointError):
    """A loss or gradient became NaN or infinite."""

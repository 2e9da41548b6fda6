"""Exception hierarchy shared by every subsystem.

The CLI maps the three families (config, data, numeric) onto distinct exit
codes, so every error raised by the library derives from one of them.
"""


class MaskDiffError(Exception):
    """Base class for all library errors."""


class ConfigError(MaskDiffError, ValueError):
    """Invalid configuration or hyperparameter."""


class DataError(MaskDiffError):
    """Missing or malformed data asset."""


class NumericError(MaskDiffError, ArithmeticError):
    """Numeric failure during computation."""


class NumericDomainError(NumericError):
    """Non-finite input or argument outside its mathematical domain."""


class ShapeError(MaskDiffError, ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(MaskDiffError, ValueError):
    """A documented precondition of an operation was violated."""


class ContextOverflowError(ContractError):
    """A sequence does not fit in the model's maximum context."""


class CheckpointFormatError(DataError):
    """A checkpoint file is corrupt, truncated, or of the wrong version."""


class VocabularyError(DataError, KeyError):
    """Text contains a span with no matching vocabulary token."""

    def __str__(self):  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class UndefinedMetricError(NumericError):
    """A metric is undefined for the supplied values."""

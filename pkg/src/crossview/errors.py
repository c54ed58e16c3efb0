"""Exception hierarchy shared by all crossview modules."""


class CrossViewError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(CrossViewError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(CrossViewError, RuntimeError):
    """A precondition of an operation was violated."""


class NumericError(CrossViewError, ArithmeticError):
    """Non-finite values were encountered."""


class ConfigError(CrossViewError, ValueError):
    """Invalid model, data or run configuration."""


class FormatError(CrossViewError, ValueError):
    """A file on disk does not match its expected format."""


class DegenerateInputError(CrossViewError, ValueError):
    """Input has no spread where a spread is required (e.g. constant foreground)."""


class MetricUndefinedError(CrossViewError, ValueError):
    """A metric cannot be computed for the given labels (e.g. a single class)."""

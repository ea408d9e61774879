"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or was asked to divide by zero."""


class DataError(ValueError):
    """A dataset file or record could not be interpreted."""


class CheckpointError(RuntimeError):
    """A model checkpoint is missing, corrupted, or incompatible."""

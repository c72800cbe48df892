"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when array shapes violate an operation's size contract."""


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


class StepError(ValueError):
    """Raised when a diffusion step index is out of range."""


class NumericError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class DataError(ValueError):
    """Raised for unreadable or malformed input files."""

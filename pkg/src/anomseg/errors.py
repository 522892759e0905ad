"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed user-supplied data (CSV, JSON, file paths)."""


class ConfigError(InputError):
    """Invalid configuration or parameter values."""


class NumericalError(RuntimeError):
    """Numerical failure during inference (zero mass, non-finite values)."""

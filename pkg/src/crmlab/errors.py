"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, widths, hyperparameters or method settings."""


class DataError(ValueError):
    """Logged data that violates an estimator precondition (e.g. zero propensity)."""


class NumericError(ArithmeticError):
    """A computation produced NaN or infinite values."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""

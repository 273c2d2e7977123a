"""Exception types shared across the package."""


class GradAlarmError(Exception):
    """Base class for all gradalarm errors."""


class ConfigError(GradAlarmError, ValueError):
    """Invalid architecture, shape, or configuration value."""


class UsageError(GradAlarmError, RuntimeError):
    """API misuse: stale caches, empty inputs, mismatched artifacts."""


class NumericError(GradAlarmError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class CacheCapacityError(UsageError):
    """A precomputed gradient cache would exceed its memory budget."""

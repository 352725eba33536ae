"""
Error kinds raised across shiftwatch.

Every error is also a builtin exception type, so callers can keep catching
ValueError / IndexError the usual way.
"""


class ShiftwatchError(Exception):
    """Base class for all shiftwatch errors."""


class ConfigError(ShiftwatchError, ValueError):
    """Invalid configuration: YAML, detector settings, scenario presets."""


class FormatError(ShiftwatchError, ValueError):
    """Malformed input data, e.g. a CSV file with missing columns."""


class DomainError(ShiftwatchError, ValueError):
    """Numeric input outside the domain of an operation (NaN, df <= 0)."""


class SizeError(ShiftwatchError, ValueError):
    """Input too small or too large for an operation."""


class RangeError(ShiftwatchError, IndexError):
    """Index or split position out of range."""


class SourceError(ShiftwatchError, RuntimeError):
    """A remote data source failed after retries."""

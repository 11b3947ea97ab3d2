"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: configuration errors exit
with 2, data errors with 3 and numeric errors with 4.
"""


class MilsedError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MilsedError):
    """Invalid configuration: bad field values, inconsistent dimensions."""


class DataError(MilsedError):
    """Invalid or malformed data: files, datasets, event lists."""


class NumericError(MilsedError):
    """Non-finite values encountered during computation."""

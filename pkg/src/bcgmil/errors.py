"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies.
"""


class BcgMilError(Exception):
    """Base class for all package errors."""


class ConfigError(BcgMilError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(BcgMilError):
    """Malformed or insufficient input data (exit code 3)."""


class DimensionMismatch(DataError):
    """Array shapes disagree; the message names the offending index."""


class NumericalError(BcgMilError):
    """A numerical computation produced non-finite or invalid results (exit code 4)."""

"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class SlgcnError(Exception):
    """Base class for all package errors."""


class ConfigError(SlgcnError):
    """Invalid configuration: unknown keys, bad values, missing files."""


class DataError(SlgcnError):
    """Malformed or inconsistent input data."""


class NumericError(SlgcnError):
    """Numeric failure during computation (non-finite values, divergence)."""

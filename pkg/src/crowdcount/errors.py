"""Error hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to, so failure
categories stay distinguishable in batch scripts.
"""


class CrowdCountError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(CrowdCountError):
    """Invalid configuration value, unknown key, or bad CLI parameter."""

    exit_code = 2


class DataError(CrowdCountError):
    """I/O failure or malformed/invalid input data."""

    exit_code = 3


class ModelCompatError(CrowdCountError):
    """Model file does not match the requested configuration or layout."""

    exit_code = 4


# Training completed but an SVR stopped on its iteration cap instead of the
# KKT tolerance. Not an exception: outputs are still written.
EXIT_CONVERGENCE_WARNING = 5

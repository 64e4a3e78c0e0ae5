"""Error hierarchy shared by every pipeline stage.

The three leaf classes map onto the CLI exit codes: configuration
problems exit 1, data problems exit 2, numeric failures exit 3.
"""


class OdanomalyError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OdanomalyError):
    """Invalid configuration, run file, or argument value."""


class DataError(OdanomalyError):
    """Malformed or inconsistent input data (CSV rows, labels, shapes)."""


class NumericError(OdanomalyError):
    """Numeric failure at runtime: non-finite loss, singular covariance."""

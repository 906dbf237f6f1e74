"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
data and integrity problems exit 3, divergence exits 4.
"""


class HarError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HarError, ValueError):
    """Invalid hyperparameters, shapes or component names."""


class ShapeError(ConfigurationError):
    """Tensor dimensions that do not line up."""


class UsageError(HarError, ValueError):
    """An API was called in a way its contract forbids."""


class DataError(HarError, ValueError):
    """Bad input data: out-of-range labels, malformed files."""


class SchemaError(DataError):
    """A data file is missing required columns."""


class ParseError(DataError):
    """A data file could not be parsed; carries the offending location."""


class IntegrityError(DataError):
    """A binary artifact is truncated or fails its checksum."""


class VersionError(DataError):
    """A binary artifact carries an unsupported format version."""


class DivergenceError(HarError, RuntimeError):
    """Training produced a non-finite loss."""

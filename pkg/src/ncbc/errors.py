"""Exception types shared across the package."""


class NcbcError(Exception):
    """Base class for all package errors."""


class ConfigError(NcbcError, ValueError):
    """Invalid configuration or parameter values."""


class ShapeError(NcbcError, ValueError):
    """Fields that should share a lattice do not."""


class DataError(NcbcError, ValueError):
    """Input data is non-finite, negative, or otherwise unusable."""


class DegeneracyError(NcbcError, ValueError):
    """A quantity is undefined for the given input (zero variance, zero mean, ...)."""


class FormatError(NcbcError, ValueError):
    """A file on disk does not follow the expected layout."""


class ValidationError(NcbcError, ValueError):
    """A parsed document violates its schema."""

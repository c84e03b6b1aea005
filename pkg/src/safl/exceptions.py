"""Exception hierarchy shared by the library and the command line."""


class SaflError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SaflError, ValueError):
    """Parameter vectors (or feature matrices) of incompatible length."""


class PreconditionError(SaflError, ValueError):
    """An operation was called with arguments outside its domain."""


class ConfigError(SaflError, ValueError):
    """An experiment configuration is malformed or semantically invalid."""


class FormatError(SaflError, ValueError):
    """A data file does not follow the expected binary layout."""

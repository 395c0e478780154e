"""
Typed errors raised by the library; the command line maps them to exit codes.
"""


class FenriError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(FenriError, ValueError):
    """An argument violates a documented precondition."""


class OutOfDomainError(FenriError):
    """A query point lies outside the sampling domain of a grid."""


class UnsupportedFormatError(FenriError):
    """A file is valid but uses a feature this package does not read."""


class CorruptFileError(FenriError):
    """A file is truncated or structurally broken."""


class NumericFailureError(FenriError):
    """A computation produced non-finite values."""


class ConfigError(FenriError, ValueError):
    """The configuration file or an override is invalid."""

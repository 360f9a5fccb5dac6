"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes (see cli.EXIT_*).
"""


class KgaxError(Exception):
    """Base class for all package errors."""


class ConfigError(KgaxError):
    """Bad configuration key, value, or missing required option."""


class DataError(KgaxError):
    """Malformed input files, unresolvable references, or exhausted samplers."""


class DivergenceError(KgaxError):
    """Training produced a non-finite loss or gradient."""


class ModelFormatError(DataError):
    """Base class for model-file problems."""


class BadMagicError(ModelFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(ModelFormatError):
    """Model file written by an unsupported format version."""


class TruncatedPayloadError(ModelFormatError):
    """Model file ends before the declared payload is complete."""

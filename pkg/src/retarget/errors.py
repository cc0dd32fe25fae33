"""Exception hierarchy shared by all stages.

The CLI maps these onto process exit codes: ValidationError -> 2,
NumericalError -> 3, FileFormatError (and OSError) -> 4.
"""


class RetargetError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RetargetError):
    """Bad arguments, configuration, or inconsistent input shapes."""


class NumericalError(RetargetError):
    """Degenerate geometry or a singular/unsolvable system."""


class FileFormatError(RetargetError):
    """Malformed or truncated on-disk artifact."""

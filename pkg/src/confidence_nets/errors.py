"""Exception hierarchy shared by the library and the command line."""


class ConfidenceNetError(Exception):
    """Base class for every error raised deliberately by this package."""


class DataError(ConfidenceNetError, ValueError):
    """Bad input data: missing files, malformed CSV cells, schema mismatches."""


class ModelFormatError(DataError):
    """A model file is truncated, corrupt, or written by an unsupported version."""


class NumericalError(ConfidenceNetError, ArithmeticError):
    """Training produced a non-finite value."""

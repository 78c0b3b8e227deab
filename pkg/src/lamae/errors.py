"""Exception hierarchy shared by every subsystem.

The CLI maps these onto exit codes, so new failure modes should subclass one
of the four families below rather than raising bare ``ValueError``.
"""


class LamaeError(Exception):
    """Base class for all package errors."""


class ConfigError(LamaeError):
    """Invalid configuration or an impossible request (CLI exit code 2)."""


class DataError(LamaeError):
    """Malformed or missing input data (CLI exit code 3)."""


class NumericError(LamaeError):
    """Non-finite loss or gradient (CLI exit code 4)."""


class DimensionError(LamaeError, ValueError):
    """Tensor shapes that cannot be combined."""


class ContractError(LamaeError, RuntimeError):
    """An operation was called outside its precondition."""


class IntegrityError(LamaeError):
    """Bookkeeping between masks, coordinates and tokens is inconsistent."""


class ParseError(DataError, ValueError):
    """A textual value (e.g. an ICD code) could not be parsed."""


class EquivalenceError(LamaeError, AssertionError):
    """Two configurations expected to be identical diverged."""

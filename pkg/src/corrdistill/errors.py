"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every public operation raises
one of them rather than a bare ``ValueError``.
"""


class CorrDistillError(Exception):
    """Base class for all package errors."""


class ConfigError(CorrDistillError, ValueError):
    """Invalid configuration value or argument."""


class ShapeError(CorrDistillError, ValueError):
    """Operand dimensions are incompatible."""


class ContractError(CorrDistillError, ValueError):
    """An input violates a documented precondition (unit rows, orientation...)."""


class DataError(CorrDistillError, ValueError):
    """Empty or otherwise unusable data."""


class ValidationError(DataError):
    """Manifest invariant violated; message names the offending field."""


class NumericError(CorrDistillError, ArithmeticError):
    """Non-finite values encountered during computation."""


class DegenerateEmbeddingError(NumericError):
    """A vector had (near) zero norm and cannot be normalized."""


class FormatError(CorrDistillError, OSError):
    """A binary file is malformed. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

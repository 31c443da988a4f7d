"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class BoltzrelaxError(Exception):
    """Base class for all library errors."""


class DimensionError(BoltzrelaxError, ValueError):
    pass


class EnumerationLimitError(BoltzrelaxError, ValueError):
    """Raised when an exact oracle would have to enumerate too many states."""

    def __init__(self, requested: int, limit: int) -> None:
        super().__init__(f"exact enumeration supports D <= {limit}, got D = {requested}")
        self.requested = requested
        self.limit = limit


class SupportError(BoltzrelaxError, ValueError):
    pass


class InvalidSmoothingError(BoltzrelaxError, ValueError):
    pass


class NotBipartiteError(BoltzrelaxError, ValueError):
    pass


class NotPositiveDefiniteError(BoltzrelaxError, ValueError):
    """W + beta*I failed its Cholesky factorization."""

    def __init__(self, beta: float, required_min: float) -> None:
        super().__init__(
            f"W + {beta:g} I is not positive definite; beta must exceed ~{required_min:.6g}"
        )
        self.beta = beta
        self.required_min = required_min


class RootBracketError(BoltzrelaxError, RuntimeError):
    pass


class EmptyBatchError(BoltzrelaxError, ValueError):
    pass


class MissingLogPartitionError(BoltzrelaxError, ValueError):
    pass


class IdxFormatError(BoltzrelaxError, ValueError):
    def __init__(self, message: str, expected: int | None = None, found: int | None = None) -> None:
        super().__init__(message)
        self.expected = expected
        self.found = found


class TruncatedFileError(IdxFormatError):
    pass


class CheckpointError(BoltzrelaxError):
    pass

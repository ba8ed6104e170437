"""Exception types shared across the package."""

from __future__ import annotations


class SingularInputError(ValueError):
    """Kernel evaluated where it is infinite (coincident points, x = 0)."""


class DomainError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class OutOfDomainError(ValueError):
    """A point lies outside the grid box."""

    def __init__(self, message: str, index: int | None = None) -> None:
        super().__init__(message)
        self.index = index


class UnderResolvedError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list[float] | None = None) -> None:
        super().__init__(message)
        self.history = list(history or [])


class UnderflowError(RuntimeError):
    def __init__(self, message: str, node: tuple[int, ...] | None = None) -> None:
        super().__init__(message)
        self.node = node

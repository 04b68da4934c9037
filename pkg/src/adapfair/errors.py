"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AdapFairError(Exception):
    """Base class for every error raised by this package."""


class InvalidInput(AdapFairError, ValueError):
    pass


class InvalidConfig(AdapFairError, ValueError):
    pass


class NumericalFailure(AdapFairError, ArithmeticError):
    def __init__(self, message: str, *, condition: float | None = None, component: str | None = None):
        super().__init__(message)
        self.condition = condition
        self.component = component


class DualNotConverged(NumericalFailure):
    pass


class MaxIterReached(AdapFairError):
    """Dual solver ran out of iterations; ``solution`` holds the best iterate."""

    def __init__(self, message: str, solution):
        super().__init__(message)
        self.solution = solution


class InstanceTooLarge(AdapFairError, ValueError):
    pass


class UnsupportedDimension(AdapFairError, ValueError):
    pass


class DegenerateGroup(AdapFairError, ValueError):
    def __init__(self, message: str, counts: dict | None = None):
        super().__init__(message)
        self.counts = counts or {}


class TrainingFailure(AdapFairError, RuntimeError):
    pass


class SchemaError(AdapFairError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(AdapFairError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDataset(AdapFairError, ValueError):
    pass


class TooSmallToSplit(AdapFairError, ValueError):
    pass

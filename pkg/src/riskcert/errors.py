"""Exception types shared across the package.

``InputError`` subclasses ValueError so callers using plain sklearn-style
validation idioms catch them naturally; the CLI maps InputError to exit
code 1 and the runtime failures to exit code 2.
"""

from __future__ import annotations


class RiskcertError(Exception):
    """Base class for every error raised by this package."""


class InputError(RiskcertError, ValueError):
    """Invalid input or configuration (CLI exit code 1)."""


class DimensionMismatch(InputError):
    pass


class AlphaOutOfRange(InputError):
    pass


class DomainError(InputError):
    pass


class TooManySubgroups(InputError):
    pass


class BatchTooSmall(InputError):
    pass


class ClassTooSmall(InputError):
    pass


class SingleClassDataset(InputError):
    pass


class BadSpec(InputError):
    pass


class ConfigError(InputError):
    pass


class ParseError(InputError):
    """A cell of an input file failed to parse.

    Carries the 1-based file row and the column name so the offending cell
    can be located directly.
    """

    def __init__(self, row: int, column: str, detail: str = ""):
        self.row = row
        self.column = column
        message = f"row {row}, column {column!r}: {detail}" if detail else (
            f"row {row}, column {column!r}"
        )
        super().__init__(message)


class SolverDidNotConverge(RiskcertError):
    """The iterative risk solver ran out of iterations.

    Carries the iteration count and the last duality gap seen.
    """

    def __init__(self, iterations: int, gap: float):
        self.iterations = iterations
        self.gap = gap
        super().__init__(
            f"solver did not converge after {iterations} iterations "
            f"(last duality gap {gap:.3e})"
        )


class NonFiniteGradient(RiskcertError):
    """A training gradient contained NaN or infinity."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite gradient at optimization step {step}")

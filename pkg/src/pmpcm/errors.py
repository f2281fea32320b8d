"""Exception hierarchy shared by every module."""

from __future__ import annotations


class PMPError(Exception):
    """Base class for all errors raised by pmpcm."""


# expression core


class ExprSyntaxError(PMPError):
    """Malformed expression text.

    ``position`` is the 0-based character offset, ``expected`` the set of
    tokens that would have been accepted there.
    """

    def __init__(self, message: str, position: int, expected: frozenset[str] | set[str] = frozenset()):
        self.position = position
        self.expected = frozenset(expected)
        detail = f"{message} at position {position}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class UnknownSymbol(PMPError):
    pass


class NonIntegerExponent(PMPError):
    pass


class UnboundVariable(PMPError):
    pass


class DomainError(PMPError, ArithmeticError):
    """log/sqrt of a negative number, division by zero, or overflow."""


class Undecidable(PMPError):
    pass


# problem model


class DimensionMismatch(PMPError):
    pass


class ForbiddenSymbol(PMPError):
    pass


class BadHorizon(PMPError):
    pass


class BadPsi0(PMPError):
    pass


class NotSolvable(PMPError):
    """The stationarity system cannot be solved symbolically for the controls."""


class NotConcave(PMPError):
    """The stationary point of H in u is not a maximizer."""


class UnsupportedControlSet(NotSolvable):
    """Symbolic elimination is only defined for an unconstrained control set."""


class EmptyBasis(PMPError):
    pass


# integration


class IntegrationError(PMPError):
    pass


class StepSizeUnderflow(IntegrationError):
    def __init__(self, message: str, last_time: float):
        self.last_time = last_time
        super().__init__(f"{message} (last good time {last_time!r})")


class NonFiniteState(IntegrationError):
    pass


# input files


class ProblemFileError(PMPError):
    """Error in a problem file, with 1-based line/column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)

"""Exception types shared across the package."""


class GeofieldError(Exception):
    """Base class for all package errors."""


class DomainError(GeofieldError, ValueError):
    """An argument is outside the domain of the operation."""


class NumericalError(GeofieldError, ArithmeticError):
    """A factorization or solve failed for numerical reasons."""


class EstimationError(GeofieldError, RuntimeError):
    """Parameter estimation could not produce a usable answer.

    ``best`` carries the best-so-far result when one exists.
    """

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace


class ParseError(GeofieldError, ValueError):
    """Malformed input file. ``row`` and ``column`` locate the problem."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column

"""Exception hierarchy shared by every pcit module."""

from __future__ import annotations


class PcitError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PcitError):
    """A requested column is missing from the input table."""


class ParseError(PcitError):
    """A cell could not be parsed as a finite real number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class EmptyDataError(PcitError):
    """The input contains no observations."""


class DomainError(PcitError, ValueError):
    """An argument lies outside its admissible range."""


class ShapeError(PcitError, ValueError):
    """Array dimensions do not agree."""


class DegeneracyError(PcitError):
    """A matrix or statistic is numerically degenerate."""


class DegenerateDesignError(DegeneracyError):
    """A design column is identically zero."""

    def __init__(self, message: str, column: int):
        super().__init__(message)
        self.column = column


class ConvergenceError(PcitError):
    """An iterative solver exhausted its budget; ``best`` holds the best iterate."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class StageError(PcitError):
    """Wraps an error raised inside one stage of a multi-stage pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

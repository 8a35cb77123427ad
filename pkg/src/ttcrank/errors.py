"""Exception hierarchy shared across the package."""


class TTCError(Exception):
    """Base class for all ttcrank errors."""


class EmptySelection(TTCError, ValueError):
    """A centroid or aggregate was requested over zero rows."""


class DegenerateAnchor(TTCError, ValueError):
    """A projection anchor has (numerically) zero norm."""


class EncodeUnavailable(TTCError, RuntimeError):
    """The encoder backend could not produce embeddings. Retryable."""


class NoBaseline(TTCError, ValueError):
    """A cost ratio was requested before any baseline texts were metered."""


class TaskLoadError(TTCError, ValueError):
    """A task file is malformed or references unknown ids."""


class DSLError(TTCError, ValueError):
    """Parse or validation error in a pipeline program, with position."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{where}{message}")


class ProposerError(TTCError, RuntimeError):
    """The external proposer timed out or returned an unusable document."""

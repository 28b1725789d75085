"""Exception hierarchy shared by every capfade module."""

from __future__ import annotations


class CapfadeError(Exception):
    """Base class for all library errors."""


class InvalidArgument(CapfadeError, ValueError):
    pass


class OutOfRange(CapfadeError, ValueError):
    """A query falls outside the span of the data it refers to."""


class InsufficientData(CapfadeError, ValueError):
    pass


class DegenerateOutput(CapfadeError, ValueError):
    """A synthetic curve came out non-physical (non-positive capacity, too short)."""


class GenerationFailure(CapfadeError, RuntimeError):
    def __init__(self, seed_id: str, attempts: int):
        super().__init__(
            f"could not produce a valid synthetic curve from seed {seed_id!r} "
            f"after {attempts} attempts"
        )
        self.seed_id = seed_id
        self.attempts = attempts


class IllConditioned(CapfadeError, ArithmeticError):
    pass


class TrainingFailure(CapfadeError, ArithmeticError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class ParseError(CapfadeError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line

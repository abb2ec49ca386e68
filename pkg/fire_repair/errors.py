"""Exception hierarchy for fire-repair.

Every error raised on purpose by the package derives from ``FireError``. Most classes
also derive from the matching builtin so callers that only know ``ValueError`` or
``KeyError`` keep working.
"""

from __future__ import annotations


class FireError(Exception):
    """Base class for all fire-repair errors."""


class ShapeError(FireError, ValueError):
    """Input or latent tensor does not have the expected shape."""


class TapError(FireError, KeyError):
    """Requested tap is not one of the model's declared taps."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class TriggerError(FireError, ValueError):
    """Trigger parameters do not fit the image they are applied to."""


class ParameterError(FireError, ValueError):
    """Numeric parameter outside its valid range."""


class StateError(FireError, RuntimeError):
    """Direction state used before it holds the statistics an operation needs."""


class DegenerateDirectionError(StateError):
    """Direction norm too small to project along."""


class TrainingDivergedError(FireError, RuntimeError):
    """Training loss became NaN or infinite."""


class EmptyInputError(FireError, ValueError):
    """An operation that needs at least one sample received none."""


class InsufficientPoolError(EmptyInputError):
    """A sample pool holds fewer entries than requested."""


class ConfigError(FireError, ValueError):
    """Experiment configuration failed validation."""


class FormatError(FireError, ValueError):
    """Artifact file is malformed (bad magic, truncated payload, bad metadata)."""


class NumericalError(FireError, ArithmeticError):
    """A forward pass produced NaN or infinite values."""

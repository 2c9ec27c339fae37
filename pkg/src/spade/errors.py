"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """Invalid model, lens, or exit configuration."""


class NumericsError(FloatingPointError):
    """A computation produced NaN or Inf."""


class PreconditionError(ValueError):
    """An operation's documented precondition was violated by the caller."""


class ConvergenceError(RuntimeError):
    """A training loop failed its convergence gate."""

    def __init__(self, message: str, *, step: int | None = None, value: float | None = None):
        super().__init__(message)
        self.step = step
        self.value = value


class ProvenanceError(ValueError):
    """Artifacts from different sources were combined (hash mismatch)."""

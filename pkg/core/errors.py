# core/errors.py

from typing import Optional


class GradVacError(Exception):
    """Base class for all library errors."""


class ValidationError(GradVacError, ValueError):
    """Input failed validation before any state was touched."""


class DimensionError(ValidationError):
    """Vector or parameter lengths disagree."""


class ConfigurationError(ValidationError):
    """Invalid configuration value or schema violation."""

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None):
        self.source = source
        self.line = line
        if source and line:
            message = f"{source}:{line}: {message}"
        elif source:
            message = f"{source}: {message}"
        super().__init__(message)


class AnalysisError(ValidationError):
    """Analysis inputs are missing or inconsistent."""


class NumericalError(GradVacError):
    """A computation produced unusable numbers."""


class DivergenceError(NumericalError):
    """Training loss became non-finite or exceeded the divergence threshold."""

    def __init__(self, step: int, loss: float, threshold: float):
        self.step = step
        self.loss = loss
        self.threshold = threshold
        super().__init__(
            f"Training diverged at step {step}: joint loss {loss!r} "
            f"(threshold {threshold!r})")

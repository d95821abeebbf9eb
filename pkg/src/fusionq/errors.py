"""Exceptions raised by `fusionq`.

Every class also derives from the closest builtin exception, so callers that
only know about `ValueError` or `RuntimeError` keep working.
"""


class FusionQError(Exception):
    """Root of the `fusionq` exception hierarchy."""


class ConfigurationError(FusionQError, ValueError):
    """A configuration value violates its invariant."""


class ShapeError(FusionQError, ValueError):
    """Tensor extents do not agree."""


class DomainError(FusionQError, ValueError):
    """An argument lies outside the domain of an operation."""


class TrainingError(FusionQError, RuntimeError):
    """A training step produced or received non-finite values."""


class GradientCheckError(FusionQError, ArithmeticError):
    """A gradient check could not be evaluated."""


class SceneParseError(FusionQError, ValueError):
    """A scene file is malformed.

    `line_number` is 1-based and counts the header line.
    """

    def __init__(self, message: str, /, *, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class CheckpointError(FusionQError, RuntimeError):
    """A checkpoint file cannot be read back."""

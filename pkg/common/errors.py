"""
Error hierarchy shared by every pipeline stage.

The CLI maps these onto process exit codes:
- ConfigError            -> 1
- MissingArtifactError   -> 2
- NumericalError         -> 3
"""

from typing import Any, Dict, Optional


class MSMEQualityError(Exception):
    """Base class for all errors raised by this package."""

    exit_code: int = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{base} ({details})"


class ConfigError(MSMEQualityError):
    """Invalid configuration or arguments."""

    exit_code = 1


class MissingArtifactError(MSMEQualityError):
    """A required input artifact does not exist."""

    exit_code = 2

    def __init__(self, key: str, root: Optional[str] = None):
        super().__init__("Missing input artifact", key=key, root=root)
        self.key = key


class NumericalError(MSMEQualityError):
    """A NaN or Inf appeared during a forward/backward pass or a loss."""

    exit_code = 3


class ShapeError(MSMEQualityError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class TapeError(MSMEQualityError, RuntimeError):
    """backward() was called on something that has no recorded forward pass."""


class MarkerSetError(MSMEQualityError, ValueError):
    """Empty or out-of-range marker combination."""


class DatasetGenerationError(MSMEQualityError):
    """Synthetic generation could not meet its constraints."""


class UnknownSampleError(MSMEQualityError, KeyError):
    """A scenario refers to a sample that is not part of the dataset."""

    def __str__(self) -> str:
        return MSMEQualityError.__str__(self)

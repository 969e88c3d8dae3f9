"""
Shared run protocol, artifact persistence and utilities.
"""

__version__ = "1.0.0"

from .artifact_store import ArtifactStore
from .errors import (
    ConfigError,
    DatasetGenerationError,
    MarkerSetError,
    MissingArtifactError,
    MSMEQualityError,
    NumericalError,
    ShapeError,
    TapeError,
    UnknownSampleError,
)
from .logging_config import configure_logging
from .rng import derive_seed, stream, streams
from .run_protocol import (
    ArtifactRef,
    RunManifest,
    StageArtifactEvent,
    StageState,
    StageStatus,
    StageStatusEvent,
)
from .stage import Stage

__all__ = [
    "__version__",
    "ArtifactStore",
    "ArtifactRef",
    "RunManifest",
    "StageArtifactEvent",
    "StageState",
    "StageStatus",
    "StageStatusEvent",
    "Stage",
    "ConfigError",
    "DatasetGenerationError",
    "MarkerSetError",
    "MissingArtifactError",
    "MSMEQualityError",
    "NumericalError",
    "ShapeError",
    "TapeError",
    "UnknownSampleError",
    "configure_logging",
    "derive_seed",
    "stream",
    "streams",
]

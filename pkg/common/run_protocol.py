"""
Run Protocol Models

Describes the lifecycle of a pipeline stage (gen-data, train-seg, ...) and
the manifest written next to its outputs. Stages stream status and
artifact events while they work; the manifest is the durable record that
lets later stages verify their inputs.
"""

import hashlib
import json
import platform
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

MANIFEST_FORMAT = "msmeq-manifest/1"


def canonical_json(data: Any) -> str:
    """Serialize with sorted keys and no whitespace variation."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# =============================================================================
# Stage States
# =============================================================================

class StageState(str, Enum):
    """
    Lifecycle states of a pipeline stage.
    """
    SUBMITTED = "submitted"      # Stage configured but not yet started
    WORKING = "working"          # Stage is actively computing
    COMPLETED = "completed"      # Stage finished and wrote its outputs
    FAILED = "failed"            # Stage aborted with an error


TERMINAL_STATES = (StageState.COMPLETED, StageState.FAILED)


# =============================================================================
# Stage Status
# =============================================================================

class StageStatus(BaseModel):
    """
    Current status of a stage including state and optional message.
    The timestamp is for logs only and never written to manifests.
    """
    state: StageState
    message: Optional[str] = None
    progress: Optional[Dict[str, Any]] = None
    timestamp: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())


# =============================================================================
# Artifacts
# =============================================================================

class ArtifactRef(BaseModel):
    """
    A file produced by a stage, addressed by its key inside the run directory.
    """
    key: str
    sha256: str
    kind: str = "file"  # dataset, checkpoint, bundle, table, report, figure
    description: Optional[str] = None


# =============================================================================
# Events
# =============================================================================

class StageStatusEvent(BaseModel):
    """
    Emitted when the stage state changes or reports progress.
    """
    stage: str
    status: StageStatus
    final: bool = False  # If true, no more events follow


class StageArtifactEvent(BaseModel):
    """
    Emitted when a stage has written an output file.
    """
    stage: str
    artifact: ArtifactRef


# =============================================================================
# Manifest
# =============================================================================

def library_versions() -> Dict[str, str]:
    """Versions of the numerical stack, echoed into every manifest."""
    import numpy
    import pandas
    import pydantic
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "pydantic": pydantic.VERSION,
    }


class RunManifest(BaseModel):
    """
    Durable record of one stage execution.

    Contains no timestamps or host names: re-running a stage with identical
    config and inputs reproduces the manifest byte for byte.
    """
    format: str = MANIFEST_FORMAT
    stage: str
    package_version: str
    versions: Dict[str, str] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    config_hash: str = ""
    inputs: Dict[str, str] = Field(default_factory=dict)  # key -> sha256
    outputs: List[ArtifactRef] = Field(default_factory=list)
    state: StageState = StageState.SUBMITTED
    error: Optional[str] = None

    @staticmethod
    def hash_config(config: Dict[str, Any]) -> str:
        return sha256_hex(canonical_json(config).encode("utf-8"))

    def to_json(self) -> str:
        return canonical_json(self.model_dump(mode="json")) + "\n"

    def output(self, key: str) -> Optional[ArtifactRef]:
        for ref in self.outputs:
            if ref.key == key:
                return ref
        return None

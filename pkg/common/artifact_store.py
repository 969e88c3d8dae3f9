"""
Artifact Store for Run State Management

Handles:
- Writing stage outputs under fixed key prefixes
- Content hashing for manifests
- Manifest persistence per stage
- Lookup of required inputs (missing input -> exit code 2)
"""

import json
import os
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import structlog

from .errors import MissingArtifactError
from .run_protocol import RunManifest, canonical_json, sha256_hex


logger = structlog.get_logger()

PathLike = Union[str, Path]


class ArtifactStore:
    """
    File-backed artifact store rooted at one run directory.

    Key Structure:
    - data/...            synthetic dataset (patch planes + sidecars)
    - models/...          segmentation checkpoints and quality regressors
    - bundles/...         uncertainty bundles
    - quality/...         feature tables and prediction CSVs
    - reports/...         JSON summaries and SVG figures
    - manifests/{stage}.json
    """

    DATA_PREFIX = "data/"
    MODELS_PREFIX = "models/"
    BUNDLES_PREFIX = "bundles/"
    QUALITY_PREFIX = "quality/"
    REPORTS_PREFIX = "reports/"
    MANIFEST_PREFIX = "manifests/"

    def __init__(self, root: PathLike):
        self.root = Path(root)

    @classmethod
    def from_env(cls, run_name: str, default_root: PathLike = "runs") -> "ArtifactStore":
        """Resolve the run directory under MSMEQ_OUTPUT_ROOT (or the default root)."""
        root = Path(os.getenv("MSMEQ_OUTPUT_ROOT", str(default_root)))
        return cls(root / run_name)

    def path(self, key: str) -> Path:
        return self.root / key

    def exists(self, key: str) -> bool:
        return self.path(key).exists()

    def require(self, key: str) -> Path:
        """Return the path for key or raise MissingArtifactError."""
        p = self.path(key)
        if not p.exists():
            raise MissingArtifactError(key, root=str(self.root))
        return p

    # =========================================================================
    # Writes
    # =========================================================================

    def write_bytes(self, key: str, data: bytes) -> str:
        """Write raw bytes and return their sha256."""
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
        digest = sha256_hex(data)
        logger.debug("Stored artifact", key=key, nbytes=len(data), sha256=digest[:12])
        return digest

    def write_text(self, key: str, text: str) -> str:
        return self.write_bytes(key, text.encode("utf-8"))

    def write_json(self, key: str, data: Any) -> str:
        """Write canonical JSON (sorted keys) so equal content gives equal bytes."""
        return self.write_text(key, canonical_json(data) + "\n")

    def delete(self, key: str) -> None:
        p = self.path(key)
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()
        logger.debug("Deleted artifact", key=key)

    # =========================================================================
    # Reads
    # =========================================================================

    def read_bytes(self, key: str) -> bytes:
        return self.require(key).read_bytes()

    def read_json(self, key: str) -> Any:
        return json.loads(self.read_bytes(key).decode("utf-8"))

    def sha256(self, key: str) -> str:
        return sha256_hex(self.read_bytes(key))

    def list_keys(self, prefix: str = "") -> List[str]:
        """All file keys under prefix, sorted."""
        base = self.path(prefix)
        if not base.exists():
            return []
        if base.is_file():
            return [prefix]
        keys = [
            p.relative_to(self.root).as_posix()
            for p in base.rglob("*")
            if p.is_file()
        ]
        return sorted(keys)

    def hash_tree(self, prefix: str) -> Dict[str, str]:
        """sha256 for every file under prefix."""
        return {key: self.sha256(key) for key in self.list_keys(prefix)}

    # =========================================================================
    # Manifests
    # =========================================================================

    def manifest_key(self, stage: str) -> str:
        return f"{self.MANIFEST_PREFIX}{stage}.json"

    def store_manifest(self, manifest: RunManifest) -> None:
        self.write_text(self.manifest_key(manifest.stage), manifest.to_json())
        logger.info(
            "Stored manifest",
            stage=manifest.stage,
            state=manifest.state.value,
            outputs=len(manifest.outputs),
        )

    def load_manifest(self, stage: str) -> Optional[RunManifest]:
        key = self.manifest_key(stage)
        if not self.exists(key):
            return None
        return RunManifest(**self.read_json(key))

"""
Pipeline Stage Base Implementation

Provides the foundation for the CLI subcommands. A stage yields status and
artifact events while it works; ``run()`` drives it, logs every event,
hashes inputs and outputs and writes the stage manifest.
"""

from abc import ABC, abstractmethod
from typing import Iterator, List, Union

import structlog
from pydantic import BaseModel

from .artifact_store import ArtifactStore
from .run_protocol import (
    TERMINAL_STATES,
    ArtifactRef,
    RunManifest,
    StageArtifactEvent,
    StageState,
    StageStatus,
    StageStatusEvent,
    canonical_json,
    library_versions,
    sha256_hex,
)


logger = structlog.get_logger()

StageEvent = Union[StageStatusEvent, StageArtifactEvent]


class Stage(ABC):
    """
    Base class for pipeline stages.

    Lifecycle:
    1. submitted - config validated, inputs located and hashed
    2. working   - process() yields progress and artifacts
    3. completed / failed - manifest written either way
    """

    name: str = "stage"

    def __init__(self, config: BaseModel, store: ArtifactStore):
        self.config = config
        self.store = store

    @abstractmethod
    def process(self) -> Iterator[StageEvent]:
        """
        Do the stage's work and yield status/artifact updates.

        Implementations call ``self.status(...)`` / ``self.artifact(...)``
        to build events.
        """

    def input_keys(self) -> List[str]:
        """Artifact keys (files or prefixes) this stage reads."""
        return []

    # =========================================================================
    # Event helpers
    # =========================================================================

    def status(self, state: StageState, message: str, final: bool = False, **progress) -> StageStatusEvent:
        return StageStatusEvent(
            stage=self.name,
            status=StageStatus(state=state, message=message, progress=progress or None),
            final=final,
        )

    def working(self, message: str, **progress) -> StageStatusEvent:
        return self.status(StageState.WORKING, message, **progress)

    def artifact(self, key: str, digest: str, kind: str = "file", description: str = "") -> StageArtifactEvent:
        return StageArtifactEvent(
            stage=self.name,
            artifact=ArtifactRef(key=key, sha256=digest, kind=kind, description=description or None),
        )

    # =========================================================================
    # Driver
    # =========================================================================

    def _hash_inputs(self) -> dict:
        inputs = {}
        for key in self.input_keys():
            path = self.store.require(key)
            if path.is_dir():
                tree = self.store.hash_tree(key)
                inputs[key] = sha256_hex(canonical_json(tree).encode("utf-8"))
            else:
                inputs[key] = self.store.sha256(key)
        return inputs

    def run(self) -> RunManifest:
        from . import __version__

        config = self.config.model_dump(mode="json")
        manifest = RunManifest(
            stage=self.name,
            package_version=__version__,
            versions=library_versions(),
            config=config,
            config_hash=RunManifest.hash_config(config),
        )
        log = logger.bind(stage=self.name, run=str(self.store.root))
        log.info("Stage submitted", config_hash=manifest.config_hash[:12])

        try:
            manifest.inputs = self._hash_inputs()
            for event in self.process():
                if isinstance(event, StageStatusEvent):
                    log.info(
                        event.status.message or event.status.state.value,
                        state=event.status.state.value,
                        **(event.status.progress or {}),
                    )
                    if event.final or event.status.state in TERMINAL_STATES:
                        break
                elif isinstance(event, StageArtifactEvent):
                    manifest.outputs.append(event.artifact)
                    log.debug("Artifact written", key=event.artifact.key, kind=event.artifact.kind)
        except Exception as e:
            log.error("Stage failed", error=str(e), error_type=type(e).__name__)
            manifest.state = StageState.FAILED
            manifest.error = f"{type(e).__name__}: {e}"
            self.store.store_manifest(manifest)
            raise

        manifest.state = StageState.COMPLETED
        self.store.store_manifest(manifest)
        log.info("Stage completed", outputs=len(manifest.outputs))
        return manifest

"""
Dataset persistence.

Layout under the store prefix (default ``data/``):
    sample_01/patch_00000.bin    channels + mask planes (nn_core blob)
    sample_01/patch_00000.json   sidecar: ids, split, availability, sha256 of .bin
    manifest.json                spec echo, every patch with its content hash
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np
import structlog

from common.artifact_store import ArtifactStore
from common.errors import ConfigError
from common.run_protocol import canonical_json, sha256_hex
from msme_segnet.markers import MarkerSet
from nn_core.checkpoint import decode_blob, encode_blob

from .config import DatasetSpec, SplitTag
from .patch import MarkerPatch


logger = structlog.get_logger()

DATASET_FORMAT = "synth-fm/1"


def _patch_stem(prefix: str, patch: MarkerPatch) -> str:
    return f"{prefix}sample_{patch.sample_id:02d}/patch_{patch.patch_id:05d}"


def save_dataset(
    store: ArtifactStore,
    dataset: Sequence[MarkerPatch],
    spec: DatasetSpec,
    prefix: str = ArtifactStore.DATA_PREFIX,
) -> List[Tuple[str, str]]:
    """Write every patch and the manifest; returns (key, sha256) for each file written."""
    written = []
    entries = []
    for patch in dataset:
        stem = _patch_stem(prefix, patch)
        blob = encode_blob(
            {"kind": "marker-patch", "patch_id": patch.patch_id},
            {"channels": patch.channels, "mask": patch.mask.astype(np.float64)},
        )
        digest = store.write_bytes(f"{stem}.bin", blob)
        sidecar = {
            "patch_id": patch.patch_id,
            "sample_id": patch.sample_id,
            "index": patch.index,
            "split": patch.split.value,
            "availability": patch.availability.digits,
            "sha256": digest,
        }
        written.append((f"{stem}.bin", digest))
        written.append((f"{stem}.json", store.write_json(f"{stem}.json", sidecar)))
        entries.append({"patch_id": patch.patch_id, "sample_id": patch.sample_id, "key": f"{stem}.bin", "sha256": digest})

    manifest = {
        "format": DATASET_FORMAT,
        "spec": spec.model_dump(mode="json"),
        "patches": entries,
        "dataset_hash": sha256_hex(canonical_json(entries).encode("utf-8")),
    }
    written.append((f"{prefix}manifest.json", store.write_json(f"{prefix}manifest.json", manifest)))
    logger.info("Dataset saved", patches=len(entries), root=str(store.path(prefix)))
    return written


def load_dataset(
    store: ArtifactStore,
    prefix: str = ArtifactStore.DATA_PREFIX,
    verify: bool = True,
) -> Tuple[DatasetSpec, List[MarkerPatch]]:
    """Read a saved dataset; with ``verify`` every blob is checked against its manifest hash."""
    manifest: Dict = store.read_json(f"{prefix}manifest.json")
    if manifest.get("format") != DATASET_FORMAT:
        raise ConfigError("Unsupported dataset format", format=manifest.get("format"))
    spec = DatasetSpec(**manifest["spec"])
    patches = []
    for entry in manifest["patches"]:
        blob = store.read_bytes(entry["key"])
        if verify and sha256_hex(blob) != entry["sha256"]:
            raise ConfigError("Dataset file does not match its manifest hash", key=entry["key"])
        sidecar = store.read_json(entry["key"][: -len(".bin")] + ".json")
        _, planes = decode_blob(blob)
        patches.append(
            MarkerPatch(
                patch_id=int(sidecar["patch_id"]),
                sample_id=int(sidecar["sample_id"]),
                index=int(sidecar["index"]),
                channels=planes["channels"],
                mask=planes["mask"].astype(np.uint8),
                split=SplitTag(sidecar["split"]),
                availability=MarkerSet.parse(sidecar["availability"], spec.n_markers),
            )
        )
    logger.info("Dataset loaded", patches=len(patches), root=str(store.path(prefix)))
    return spec, patches

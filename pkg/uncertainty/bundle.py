"""
UncertaintyBundle and its on-disk form.

A bundle file is the nn_core blob container holding three H x W planes
(mean_prob, u_e, u_a) as little-endian float32, with the patch id,
availability, sample count and variant in the JSON header.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from common.errors import MissingArtifactError, NumericalError, ShapeError
from msme_segnet.markers import MarkerSet
from nn_core.checkpoint import decode_blob, encode_blob, to_float32_precision

BUNDLE_KIND = "uncertainty-bundle"


@dataclass(frozen=True)
class UncertaintyBundle:
    patch_id: int
    availability: MarkerSet
    mean_prob: np.ndarray
    u_e: np.ndarray
    u_a: Optional[np.ndarray]
    T_used: int
    variant: str = ""

    def __post_init__(self) -> None:
        shape = self.mean_prob.shape
        if self.u_e.shape != shape or (self.u_a is not None and self.u_a.shape != shape):
            raise ShapeError("uncertainty maps differ in shape", mean_prob=shape, u_e=self.u_e.shape)
        for name, plane in (("mean_prob", self.mean_prob), ("u_e", self.u_e), ("u_a", self.u_a)):
            if plane is not None and not np.isfinite(plane).all():
                raise NumericalError("non-finite uncertainty map", plane=name, patch_id=self.patch_id)

    @property
    def shape(self):
        return self.mean_prob.shape

    @property
    def has_aleatoric(self) -> bool:
        return self.u_a is not None

    def aleatoric_or_zero(self) -> np.ndarray:
        return self.u_a if self.u_a is not None else np.zeros(self.shape)

    def at_storage_precision(self) -> "UncertaintyBundle":
        return UncertaintyBundle(
            patch_id=self.patch_id,
            availability=self.availability,
            mean_prob=to_float32_precision(self.mean_prob),
            u_e=to_float32_precision(self.u_e),
            u_a=to_float32_precision(self.u_a) if self.u_a is not None else None,
            T_used=self.T_used,
            variant=self.variant,
        )


def bundle_to_bytes(bundle: UncertaintyBundle) -> bytes:
    meta = {
        "kind": BUNDLE_KIND,
        "patch_id": int(bundle.patch_id),
        "availability": bundle.availability.digits,
        "n_markers": bundle.availability.n_markers,
        "T_used": int(bundle.T_used),
        "variant": bundle.variant,
        "has_u_a": bundle.has_aleatoric,
    }
    planes = {"mean_prob": bundle.mean_prob, "u_e": bundle.u_e, "u_a": bundle.aleatoric_or_zero()}
    return encode_blob(meta, planes)


def bundle_from_bytes(data: bytes) -> UncertaintyBundle:
    meta, planes = decode_blob(data)
    if meta.get("kind") != BUNDLE_KIND:
        raise ShapeError("blob does not hold an uncertainty bundle", kind=meta.get("kind"))
    return UncertaintyBundle(
        patch_id=int(meta["patch_id"]),
        availability=MarkerSet.parse(meta["availability"], int(meta["n_markers"])),
        mean_prob=planes["mean_prob"],
        u_e=planes["u_e"],
        u_a=planes["u_a"] if meta["has_u_a"] else None,
        T_used=int(meta["T_used"]),
        variant=meta.get("variant", ""),
    )


def write_bundle(path: Union[str, Path], bundle: UncertaintyBundle) -> bytes:
    data = bundle_to_bytes(bundle)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(data)
    return data


def read_bundle(path: Union[str, Path]) -> UncertaintyBundle:
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(str(source))
    return bundle_from_bytes(source.read_bytes())


def bundle_name(patch_id: int, availability: MarkerSet) -> str:
    """File name of a bundle inside a bundle directory."""
    return f"p{patch_id:05d}_{availability.name}.bin"

from dataclasses import dataclass, replace

import numpy as np

from common.errors import MarkerSetError
from msme_segnet.markers import MarkerSet, mask_channels

from .config import SplitTag


@dataclass(frozen=True)
class MarkerPatch:
    """One 2D patch: K channel planes, its mask, and where it belongs."""

    patch_id: int
    sample_id: int
    index: int
    channels: np.ndarray  # K x H x W, float values in [0, 1]
    mask: np.ndarray      # H x W, uint8 {0, 1}
    split: SplitTag
    availability: MarkerSet

    @property
    def extent(self) -> int:
        return int(self.mask.shape[0])

    @property
    def foreground_fraction(self) -> float:
        return float(self.mask.mean())

    def with_split(self, split: SplitTag) -> "MarkerPatch":
        return replace(self, split=split)


def mask_patch(patch: MarkerPatch, availability: MarkerSet) -> MarkerPatch:
    """Restrict a patch to a subset of its available markers, zero-filling the rest."""
    if not availability.issubset(patch.availability):
        raise MarkerSetError(
            "cannot restore markers that are not available",
            patch_id=patch.patch_id,
            available=patch.availability.name,
            requested=availability.name,
        )
    return replace(patch, channels=mask_channels(patch.channels, availability), availability=availability)

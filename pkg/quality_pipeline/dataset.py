"""
Quality examples: one per (patch, marker combination), pairing the
uncertainty bundle with the F1 the segmentation actually reached.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from common.errors import ConfigError, MarkerSetError
from metrics.segmentation import f1_score, foreground_to_prob
from msme_segnet.markers import MarkerSet, enumerate_combinations, mask_channels
from quality_features.features import FeatureMode, assemble_features
from synth_fm.config import SplitTag
from synth_fm.patch import MarkerPatch
from uncertainty.bundle import UncertaintyBundle
from uncertainty.inference import InferenceConfig, MCStreams, UncertaintyModel, predict_bundle


logger = structlog.get_logger()


@dataclass(frozen=True)
class QualityExample:
    patch_id: int
    sample_id: int
    fold: int
    target: float
    bundle: UncertaintyBundle

    def __post_init__(self) -> None:
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"quality target must lie in [0, 1], got {self.target}")
        if self.fold < 0:
            raise ValueError(f"fold index must be non-negative, got {self.fold}")

    @property
    def availability(self) -> MarkerSet:
        return self.bundle.availability

    def features(self, mode: FeatureMode) -> np.ndarray:
        return assemble_features(self.bundle, mode)

    def map_stack(self) -> np.ndarray:
        """2 x H x W stack of (u_e, u_a); u_a is zero when the bundle has none."""
        return np.stack([self.bundle.u_e, self.bundle.aleatoric_or_zero()])


def feature_matrix(examples: Sequence[QualityExample], mode: FeatureMode) -> np.ndarray:
    if not examples:
        raise ConfigError("No quality examples")
    return np.stack([e.features(mode) for e in examples])


def targets(examples: Sequence[QualityExample]) -> np.ndarray:
    return np.array([e.target for e in examples], dtype=np.float64)


def quality_example(
    model: UncertaintyModel,
    patch: MarkerPatch,
    availability: MarkerSet,
    fold: int,
    T: int,
    seed: int,
    config: InferenceConfig,
) -> QualityExample:
    channels = mask_channels(patch.channels, availability)
    bundle = predict_bundle(
        model, channels, availability, T, MCStreams(seed, patch.patch_id, availability.mask), patch.patch_id, config
    )
    q = f1_score(patch.mask, foreground_to_prob(bundle.mean_prob))
    return QualityExample(patch.patch_id, patch.sample_id, fold, q, bundle)


def build_quality_dataset(
    seg_model: UncertaintyModel,
    dataset: Sequence[MarkerPatch],
    split: SplitTag,
    T: int,
    seed: int,
    fold: int = 0,
    combinations: Optional[Sequence[MarkerSet]] = None,
    config: Optional[InferenceConfig] = None,
    workers: int = 1,
) -> List[QualityExample]:
    """
    Every patch of ``split`` under every marker combination.

    Patches must carry all K markers so each combination can be imposed by
    masking. Examples come out patch-major, combinations in canonical order.
    """
    patches = [p for p in dataset if p.split == SplitTag(split)]
    if not patches:
        raise ConfigError("No patches in split", split=SplitTag(split).value)
    n_markers = patches[0].availability.n_markers
    for patch in patches:
        if len(patch.availability) != n_markers:
            raise MarkerSetError("Quality patches need every marker", patch_id=patch.patch_id, availability=patch.availability.name)
    combos = list(combinations) if combinations is not None else enumerate_combinations(n_markers)
    config = config or InferenceConfig(samples=T)
    work: List[Tuple[MarkerPatch, MarkerSet]] = [(p, c) for p in patches for c in combos]

    def one(item: Tuple[MarkerPatch, MarkerSet]) -> QualityExample:
        return quality_example(seg_model, item[0], item[1], fold, T, seed, config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            examples = list(pool.map(one, work))
    else:
        examples = [one(item) for item in work]

    logger.info(
        "Quality dataset built",
        split=SplitTag(split).value,
        fold=fold,
        patches=len(patches),
        combinations=len(combos),
        examples=len(examples),
        mean_f1=round(float(np.mean([e.target for e in examples])), 4),
        T=T,
        seed=seed,
    )
    return examples

"""
Training scenarios (per-sample marker ablation) and split management.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import structlog
from pydantic import BaseModel, Field, ValidationError, model_validator

from common.errors import ConfigError, MarkerSetError, UnknownSampleError
from common.rng import stream
from msme_segnet.markers import MarkerSet

from .config import SampleSplit, SplitTag
from .patch import MarkerPatch, mask_patch


logger = structlog.get_logger()


class Scenario(BaseModel):
    """
    Availability per training sample.

    ``samples`` maps sample ids to combinations ("135"); ``slots`` lists
    combinations by position among the sorted training samples of whatever
    split is in effect. A scenario with neither keeps every marker.
    """

    name: str
    n_markers: int = Field(default=5, ge=1)
    samples: Dict[int, str] = Field(default_factory=dict)
    slots: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "Scenario":
        if self.samples and self.slots:
            raise ValueError("give either samples or slots, not both")
        for combo in list(self.samples.values()) + self.slots:
            MarkerSet.parse(combo, self.n_markers)
        return self

    def bind(self, train_ids: Sequence[int]) -> Dict[int, MarkerSet]:
        """Availability for each training sample id."""
        train_ids = sorted(train_ids)
        if self.slots:
            if len(self.slots) != len(train_ids):
                raise ConfigError(
                    "Scenario slot count differs from training sample count",
                    scenario=self.name,
                    slots=len(self.slots),
                    train=len(train_ids),
                )
            return {sid: MarkerSet.parse(c, self.n_markers) for sid, c in zip(train_ids, self.slots)}
        if self.samples:
            missing = sorted(set(train_ids) - set(self.samples))
            if missing:
                raise ConfigError("Scenario does not name every training sample", scenario=self.name, missing=missing)
            return {sid: MarkerSet.parse(self.samples[sid], self.n_markers) for sid in train_ids}
        return {sid: MarkerSet.full(self.n_markers) for sid in train_ids}


BUILTIN_SCENARIOS: Dict[str, Scenario] = {
    "full": Scenario(name="full"),
    "case6": Scenario(name="case6", slots=["135", "124", "35", "23", "45"]),
}


def load_scenario(name_or_path: str) -> Scenario:
    """A built-in scenario by name, or a scenario JSON file."""
    if name_or_path in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError("Unknown scenario", scenario=name_or_path, builtin=sorted(BUILTIN_SCENARIOS))
    try:
        return Scenario(**json.loads(path.read_text()))
    except (ValidationError, ValueError) as exc:
        raise ConfigError("Invalid scenario file", path=str(path), reason=str(exc)) from exc


def apply_scenario(dataset: Sequence[MarkerPatch], scenario: Scenario) -> List[MarkerPatch]:
    """Ablate training patches per their sample's availability; val/test patches are untouched."""
    sample_ids = {p.sample_id for p in dataset}
    train_ids = sorted({p.sample_id for p in dataset if p.split == SplitTag.TRAIN})
    unknown = sorted(set(scenario.samples) - sample_ids)
    if unknown:
        raise UnknownSampleError("Scenario names samples that are not in the dataset", scenario=scenario.name, samples=unknown)
    not_train = sorted(set(scenario.samples) - set(train_ids))
    if not_train:
        raise ConfigError("Scenario may only ablate training samples", scenario=scenario.name, samples=not_train)

    availability = scenario.bind(train_ids)
    result = []
    for patch in dataset:
        if patch.split == SplitTag.TRAIN:
            patch = mask_patch(patch, availability[patch.sample_id])
        result.append(patch)
    logger.info(
        "Scenario applied",
        scenario=scenario.name,
        availability={sid: a.name for sid, a in availability.items()},
    )
    return result


def fold_split(n_samples: int = 8, fold: int = 0, seed: int = 0, n_test: int = 2, n_folds: int = 4) -> SampleSplit:
    """
    Rotated-validation split.

    The last ``n_test`` samples are the fixed test set. The remaining ones
    are permuted once from ``seed``; fold f validates on the f-th sample of
    that permutation and trains on the rest.
    """
    pool = list(range(1, n_samples - n_test + 1))
    if n_folds > len(pool):
        raise ConfigError("More folds than non-test samples", folds=n_folds, samples=len(pool))
    if not 0 <= fold < n_folds:
        raise ConfigError("Fold index out of range", fold=fold, folds=n_folds)
    order = [int(s) for s in stream(seed, "folds").permutation(pool)]
    val = order[fold]
    return SampleSplit(
        train=sorted(s for s in pool if s != val),
        val=[val],
        test=list(range(n_samples - n_test + 1, n_samples + 1)),
    )


def assign_split(dataset: Sequence[MarkerPatch], split: SampleSplit) -> List[MarkerPatch]:
    """Re-tag patches by sample; val/test patches must still carry every marker."""
    result = []
    for patch in dataset:
        try:
            tag = split.tag_of(patch.sample_id)
        except KeyError:
            raise UnknownSampleError("Sample is not part of the split", sample_id=patch.sample_id) from None
        if tag != SplitTag.TRAIN and len(patch.availability) != patch.availability.n_markers:
            raise MarkerSetError(
                "Validation and test patches need every marker",
                patch_id=patch.patch_id,
                availability=patch.availability.name,
            )
        result.append(patch.with_split(tag))
    return result


def split_patches(dataset: Sequence[MarkerPatch], tag: SplitTag, samples: Optional[Sequence[int]] = None) -> List[MarkerPatch]:
    return [p for p in dataset if p.split == tag and (samples is None or p.sample_id in samples)]

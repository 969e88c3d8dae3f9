"""
Dataset and split configuration for the synthetic fluorescence-microscopy
generator.
"""

from enum import Enum
from typing import List

from pydantic import BaseModel, Field, model_validator

# Rows: markers 1..5. Columns: (vessel, confounder) visibility.
# Marker 1 sees vessels clearly, marker 4 mostly renders the confounding
# non-sinusoid structures, marker 5 is close to noise.
DEFAULT_VISIBILITY = [
    [0.9, 0.0],
    [0.5, 0.1],
    [0.7, 0.0],
    [0.4, 0.9],
    [0.2, 0.1],
]
DEFAULT_NOISE = [0.08, 0.15, 0.10, 0.12, 0.20]
DEFAULT_PATCHES = [29, 29, 29, 29, 28, 28, 29, 29]


class SplitTag(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class SampleSplit(BaseModel):
    """Sample ids (1-based) per split."""

    train: List[int]
    val: List[int]
    test: List[int]

    @model_validator(mode="after")
    def _disjoint(self) -> "SampleSplit":
        ids = self.train + self.val + self.test
        if len(ids) != len(set(ids)):
            raise ValueError("a sample appears in more than one split")
        if not self.train:
            raise ValueError("split needs at least one training sample")
        return self

    def tag_of(self, sample_id: int) -> SplitTag:
        if sample_id in self.train:
            return SplitTag.TRAIN
        if sample_id in self.val:
            return SplitTag.VAL
        if sample_id in self.test:
            return SplitTag.TEST
        raise KeyError(sample_id)


DEFAULT_SPLIT = SampleSplit(train=[1, 2, 3, 4, 5], val=[6], test=[7, 8])


class DatasetSpec(BaseModel):
    n_markers: int = Field(default=5, ge=1)
    patches_per_sample: List[int] = Field(default_factory=lambda: list(DEFAULT_PATCHES))
    patch_extent: int = Field(default=64, ge=16)
    foreground_target: float = Field(default=0.114, gt=0.0, lt=1.0)
    confounder_target: float = Field(default=0.05, ge=0.0, lt=1.0)
    visibility: List[List[float]] = Field(default_factory=lambda: [list(r) for r in DEFAULT_VISIBILITY])
    noise: List[float] = Field(default_factory=lambda: list(DEFAULT_NOISE))
    background: float = Field(default=0.1, ge=0.0, le=1.0)
    gain_spread: float = Field(default=0.15, ge=0.0, lt=1.0)
    blur_sigma: float = Field(default=1.0, ge=0.0)
    radius_range: List[float] = Field(default_factory=lambda: [1.0, 2.5])
    max_retries: int = Field(default=100, ge=1)
    split: SampleSplit = Field(default_factory=lambda: DEFAULT_SPLIT.model_copy())
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "DatasetSpec":
        if len(self.visibility) != self.n_markers or any(len(row) != 2 for row in self.visibility):
            raise ValueError("visibility must be n_markers rows of (vessel, confounder) weights")
        if len(self.noise) != self.n_markers:
            raise ValueError("noise needs one level per marker")
        if not self.patches_per_sample or min(self.patches_per_sample) < 1:
            raise ValueError("every sample needs at least one patch")
        lo, hi = self.radius_range
        if not 0.5 <= lo <= hi:
            raise ValueError("radius_range must satisfy 0.5 <= low <= high")
        known = set(range(1, self.n_samples + 1))
        split_ids = set(self.split.train + self.split.val + self.split.test)
        if split_ids != known:
            raise ValueError(f"split must assign every sample 1..{self.n_samples} exactly once")
        return self

    @property
    def n_samples(self) -> int:
        return len(self.patches_per_sample)

    @property
    def n_patches(self) -> int:
        return sum(self.patches_per_sample)

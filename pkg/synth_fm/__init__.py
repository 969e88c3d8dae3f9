"""
Synthetic fluorescence-microscopy dataset, scenarios and splits.
"""

from msme_segnet.markers import enumerate_combinations

from .config import DEFAULT_SPLIT, DatasetSpec, SampleSplit, SplitTag
from .generator import generate_dataset, generate_patch, patch_layout
from .patch import MarkerPatch, mask_patch
from .scenarios import (
    BUILTIN_SCENARIOS,
    Scenario,
    apply_scenario,
    assign_split,
    fold_split,
    load_scenario,
    split_patches,
)
from .storage import load_dataset, save_dataset

__all__ = [
    "DEFAULT_SPLIT",
    "DatasetSpec",
    "SampleSplit",
    "SplitTag",
    "MarkerPatch",
    "mask_patch",
    "generate_dataset",
    "generate_patch",
    "patch_layout",
    "enumerate_combinations",
    "BUILTIN_SCENARIOS",
    "Scenario",
    "apply_scenario",
    "assign_split",
    "fold_split",
    "load_scenario",
    "split_patches",
    "load_dataset",
    "save_dataset",
]

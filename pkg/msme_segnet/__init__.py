"""
MS-ME segmentation network: Marker Sampling, Marker Excite and the
uncertainty-aware UNet variants.
"""

from .markers import (
    DEFAULT_MARKERS,
    MarkerSet,
    enumerate_combinations,
    mask_channels,
    sample_marker_subset,
)
from .model import (
    ArchConfig,
    MarkerExcite,
    MSMEUNet,
    SegModel,
    SegOutput,
    SegVariant,
    VariantKind,
    build_model,
    load_model,
    marker_excite,
    model_from_bytes,
    model_to_bytes,
    save_model,
    seg_forward,
)
from .train import TrainConfig, TrainingHistory, one_hot_mask, train_segmentation

__all__ = [
    "DEFAULT_MARKERS",
    "MarkerSet",
    "enumerate_combinations",
    "mask_channels",
    "sample_marker_subset",
    "ArchConfig",
    "MarkerExcite",
    "MSMEUNet",
    "SegModel",
    "SegOutput",
    "SegVariant",
    "VariantKind",
    "build_model",
    "load_model",
    "marker_excite",
    "model_from_bytes",
    "model_to_bytes",
    "save_model",
    "seg_forward",
    "TrainConfig",
    "TrainingHistory",
    "one_hot_mask",
    "train_segmentation",
]

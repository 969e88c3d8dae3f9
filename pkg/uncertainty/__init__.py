"""
Per-patch uncertainty maps from the segmentation variants.
"""

from .bundle import (
    UncertaintyBundle,
    bundle_from_bytes,
    bundle_name,
    bundle_to_bytes,
    read_bundle,
    write_bundle,
)
from .inference import (
    DEFAULT_SAMPLES,
    InferenceConfig,
    MCStreams,
    aleatoric_infer,
    combined_predict,
    deterministic_predict,
    mc_epistemic,
    predict_bundle,
    predict_many,
)

__all__ = [
    "UncertaintyBundle",
    "bundle_from_bytes",
    "bundle_name",
    "bundle_to_bytes",
    "read_bundle",
    "write_bundle",
    "DEFAULT_SAMPLES",
    "InferenceConfig",
    "MCStreams",
    "aleatoric_infer",
    "combined_predict",
    "deterministic_predict",
    "mc_epistemic",
    "predict_bundle",
    "predict_many",
]

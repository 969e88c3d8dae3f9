"""
Fixed-length features of uncertainty maps for the quality regressors.
"""

from .features import (
    BLOCK_LENGTH,
    HIST_THRESHOLDS,
    PERCENTILES,
    FeatureMode,
    assemble_features,
    combination_one_hot,
    cumulative_hist,
    feature_length,
    feature_names,
    map_features,
    moments,
    percentiles,
)

__all__ = [
    "BLOCK_LENGTH",
    "HIST_THRESHOLDS",
    "PERCENTILES",
    "FeatureMode",
    "assemble_features",
    "combination_one_hot",
    "cumulative_hist",
    "feature_length",
    "feature_names",
    "map_features",
    "moments",
    "percentiles",
]

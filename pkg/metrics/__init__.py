"""
Segmentation and regression metrics.

The cross-validation harness lives in ``metrics.crossval`` and is imported
from there directly.
"""

from .regression import r2, rmse
from .segmentation import (
    EvalRecord,
    RelativeF1,
    f1_from_masks,
    f1_score,
    foreground_to_prob,
    records_from_frame,
    records_to_frame,
    relative_f1,
)

__all__ = [
    "r2",
    "rmse",
    "EvalRecord",
    "RelativeF1",
    "f1_from_masks",
    "f1_score",
    "foreground_to_prob",
    "records_from_frame",
    "records_to_frame",
    "relative_f1",
]

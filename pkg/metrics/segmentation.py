"""
Segmentation F1 and paired relative-F1 comparisons.
"""

from typing import Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from common.errors import ConfigError, ShapeError
from msme_segnet.markers import DEFAULT_MARKERS, MarkerSet

EvalKey = Tuple[int, int, int]  # (patch_id, combination mask, fold)


def f1_from_masks(mask: np.ndarray, prediction: np.ndarray) -> float:
    """2|y & p| / (|y| + |p|); 1 when both are empty."""
    y = np.asarray(mask).astype(bool)
    p = np.asarray(prediction).astype(bool)
    if y.shape != p.shape:
        raise ShapeError("mask and prediction differ in shape", mask=y.shape, prediction=p.shape)
    denom = int(y.sum()) + int(p.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(y, p).sum()) / denom


def f1_score(mask: np.ndarray, prob: np.ndarray) -> float:
    """F1 of argmax over the class axis of a 2 x H x W probability map against a binary mask."""
    prob = np.asarray(prob)
    if prob.ndim != 3 or prob.shape[0] != 2 or prob.shape[1:] != np.shape(mask):
        raise ShapeError("f1_score expects prob 2 x H x W matching the mask", prob=prob.shape, mask=np.shape(mask))
    return f1_from_masks(mask, np.argmax(prob, axis=0) == 1)


def foreground_to_prob(mean_prob: np.ndarray) -> np.ndarray:
    """Two-class stack [1 - p, p] from a foreground probability plane."""
    return np.stack([1.0 - mean_prob, mean_prob])


class EvalRecord(BaseModel):
    patch_id: int
    combination: int = Field(description="marker combination mask")
    fold: int
    model: str
    f1: float = Field(ge=0.0, le=1.0)
    n_markers: int = Field(default=DEFAULT_MARKERS, ge=1)

    @property
    def key(self) -> EvalKey:
        return (self.patch_id, self.combination, self.fold)

    @property
    def availability(self) -> MarkerSet:
        return MarkerSet(self.combination, self.n_markers)


class RelativeF1(BaseModel):
    model: str
    reference: str
    deltas: List[float]
    keys: List[EvalKey]
    median: float
    mean: float
    fraction_positive: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "patch_id": [k[0] for k in self.keys],
                "combo_mask": [k[1] for k in self.keys],
                "fold": [k[2] for k in self.keys],
                "model": self.model,
                "reference": self.reference,
                "delta_f1": self.deltas,
            }
        )


def _by_key(records: Iterable[EvalRecord]) -> Dict[EvalKey, EvalRecord]:
    table: Dict[EvalKey, EvalRecord] = {}
    for record in records:
        if record.key in table:
            raise ConfigError("Duplicate evaluation record", key=record.key, model=record.model)
        table[record.key] = record
    return table


def relative_f1(records_model: Iterable[EvalRecord], records_reference: Iterable[EvalRecord]) -> RelativeF1:
    """Paired model - reference F1 differences over identical (patch, combination, fold) keys."""
    model = _by_key(records_model)
    reference = _by_key(records_reference)
    if set(model) != set(reference):
        raise ConfigError(
            "Record keys differ between model and reference",
            only_model=len(set(model) - set(reference)),
            only_reference=len(set(reference) - set(model)),
        )
    if not model:
        raise ConfigError("No records to compare")
    keys = sorted(model)
    deltas = np.array([model[k].f1 - reference[k].f1 for k in keys])
    return RelativeF1(
        model=model[keys[0]].model,
        reference=reference[keys[0]].model,
        deltas=deltas.tolist(),
        keys=keys,
        median=float(np.median(deltas)),
        mean=float(np.mean(deltas)),
        fraction_positive=float(np.mean(deltas > 0.0)),
    )


def records_to_frame(records: Iterable[EvalRecord]) -> pd.DataFrame:
    rows = [
        {"patch_id": r.patch_id, "combo_mask": r.combination, "combination": r.availability.name,
         "fold": r.fold, "model": r.model, "f1": r.f1}
        for r in records
    ]
    frame = pd.DataFrame(rows, columns=["patch_id", "combo_mask", "combination", "fold", "model", "f1"])
    return frame.sort_values(["model", "fold", "patch_id", "combo_mask"], kind="stable").reset_index(drop=True)


def records_from_frame(frame: pd.DataFrame, n_markers: int = DEFAULT_MARKERS) -> List[EvalRecord]:
    return [
        EvalRecord(
            patch_id=int(r.patch_id),
            combination=int(r.combo_mask),
            fold=int(r.fold),
            model=str(r.model),
            f1=float(r.f1),
            n_markers=n_markers,
        )
        for r in frame.itertuples(index=False)
    ]

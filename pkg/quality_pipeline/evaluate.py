"""
Quality evaluation: RMSE over every (patch, combination, fold) prediction
and the per-combination view (mean over folds of the per-fold means, SD
across folds, R^2 between predicted and true means).
"""

from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from common.errors import ConfigError
from metrics.regression import r2, rmse
from msme_segnet.markers import DEFAULT_MARKERS, MarkerSet

from .dataset import QualityExample
from .regressors import QualityRegressor

PREDICTION_COLUMNS = ["patch_id", "combo_mask", "fold", "q_true", "q_pred", "regressor_name"]


class CombinationSummary(BaseModel):
    combination: str
    combo_mask: int
    folds: int
    pred_mean: float
    pred_sd: float
    true_mean: float
    true_sd: float


class QualityEvaluation(BaseModel):
    regressor: str
    n: int
    rmse: float
    rmse_per_fold: Dict[int, float]
    r2_of_means: float
    per_combination: List[CombinationSummary]


def predictions_frame(
    regressor: Union[QualityRegressor, Mapping[int, QualityRegressor]],
    examples: Sequence[QualityExample],
) -> pd.DataFrame:
    """One row per example; a mapping selects each example's regressor by its fold."""
    if not examples:
        raise ConfigError("No test examples to evaluate")
    by_fold: Dict[int, List[int]] = {}
    for i, example in enumerate(examples):
        by_fold.setdefault(example.fold, []).append(i)

    q_pred = np.zeros(len(examples))
    names = set()
    for fold, rows in sorted(by_fold.items()):
        model = regressor[fold] if isinstance(regressor, Mapping) else regressor
        names.add(model.name)
        q_pred[rows] = model.predict([examples[i] for i in rows])
    if len(names) != 1:
        raise ConfigError("Per-fold regressors must share a name", names=sorted(names))

    return pd.DataFrame(
        {
            "patch_id": [e.patch_id for e in examples],
            "combo_mask": [e.availability.mask for e in examples],
            "fold": [e.fold for e in examples],
            "q_true": [e.target for e in examples],
            "q_pred": q_pred,
            "regressor_name": names.pop(),
        },
        columns=PREDICTION_COLUMNS,
    )


def summarize_predictions(frame: pd.DataFrame, n_markers: int = DEFAULT_MARKERS) -> QualityEvaluation:
    """Aggregate one regressor's prediction table; ``n_markers`` names the combination masks."""
    if frame.empty:
        raise ConfigError("No predictions to evaluate")
    names = frame["regressor_name"].unique()
    if len(names) != 1:
        raise ConfigError("Prediction table mixes regressors", names=sorted(names))

    per_fold = {
        int(fold): rmse(group["q_pred"], group["q_true"])
        for fold, group in frame.groupby("fold", sort=True)
    }
    fold_means = frame.groupby(["combo_mask", "fold"], sort=True)[["q_pred", "q_true"]].mean()
    per_combo = fold_means.groupby(level="combo_mask", sort=True).agg(["mean", "std", "count"])

    summaries = []
    for mask, row in per_combo.iterrows():
        folds = int(row[("q_pred", "count")])
        summaries.append(
            CombinationSummary(
                combination=MarkerSet(int(mask), n_markers).name,
                combo_mask=int(mask),
                folds=folds,
                pred_mean=float(row[("q_pred", "mean")]),
                pred_sd=float(row[("q_pred", "std")]) if folds > 1 else 0.0,
                true_mean=float(row[("q_true", "mean")]),
                true_sd=float(row[("q_true", "std")]) if folds > 1 else 0.0,
            )
        )
    return QualityEvaluation(
        regressor=str(names[0]),
        n=len(frame),
        rmse=rmse(frame["q_pred"], frame["q_true"]),
        rmse_per_fold=per_fold,
        r2_of_means=r2([s.pred_mean for s in summaries], [s.true_mean for s in summaries]),
        per_combination=summaries,
    )


def evaluate_quality(
    regressor: Union[QualityRegressor, Mapping[int, QualityRegressor]],
    test_examples: Sequence[QualityExample],
) -> QualityEvaluation:
    n_markers = test_examples[0].availability.n_markers if test_examples else DEFAULT_MARKERS
    return summarize_predictions(predictions_frame(regressor, test_examples), n_markers)

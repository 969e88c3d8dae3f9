"""
Quality stage: examples from uncertainty bundles, regressors over them and
their evaluation.
"""

from .dataset import QualityExample, build_quality_dataset, feature_matrix, quality_example, targets
from .evaluate import (
    PREDICTION_COLUMNS,
    CombinationSummary,
    QualityEvaluation,
    evaluate_quality,
    predictions_frame,
    summarize_predictions,
)
from .io import (
    feature_table,
    load_regressor,
    read_predictions,
    read_quality_set,
    save_regressor,
    write_predictions,
    write_quality_set,
)
from .qnet import QNet, QNetSpec, load_qnet, qnet_from_bytes, qnet_predict, qnet_to_bytes, train_quality_cnn
from .regressors import (
    CNN_NAME,
    REGRESSOR_NAMES,
    RF_MODES,
    CNNRegressor,
    ForestRegressor,
    QualityRegressor,
    train_quality_rf,
    train_regressor,
)

__all__ = [
    "QualityExample",
    "build_quality_dataset",
    "feature_matrix",
    "quality_example",
    "targets",
    "PREDICTION_COLUMNS",
    "CombinationSummary",
    "QualityEvaluation",
    "evaluate_quality",
    "predictions_frame",
    "summarize_predictions",
    "feature_table",
    "load_regressor",
    "read_predictions",
    "read_quality_set",
    "save_regressor",
    "write_predictions",
    "write_quality_set",
    "QNet",
    "QNetSpec",
    "load_qnet",
    "qnet_from_bytes",
    "qnet_predict",
    "qnet_to_bytes",
    "train_quality_cnn",
    "CNN_NAME",
    "REGRESSOR_NAMES",
    "RF_MODES",
    "CNNRegressor",
    "ForestRegressor",
    "QualityRegressor",
    "train_quality_rf",
    "train_regressor",
]

"""
Quality regressors behind one surface: ``name`` and ``predict(examples)``.

    rf-e     forest on u_e features
    rf-a     forest on u_a features
    rf-both  forest on u_e and u_a features
    cnn      quality CNN on the (u_e, u_a) stack
"""

from dataclasses import dataclass
from typing import Dict, Protocol, Sequence

import numpy as np
import structlog

from common.errors import ConfigError
from quality_features.features import FeatureMode
from random_forest.forest import Forest, ForestParams, fit

from .dataset import QualityExample, feature_matrix, targets
from .qnet import QNet, QNetSpec, qnet_predict, train_quality_cnn


logger = structlog.get_logger()

RF_MODES: Dict[str, FeatureMode] = {
    "rf-e": FeatureMode.E_ONLY,
    "rf-a": FeatureMode.A_ONLY,
    "rf-both": FeatureMode.BOTH,
}
CNN_NAME = "cnn"
REGRESSOR_NAMES = [*RF_MODES, CNN_NAME]


class QualityRegressor(Protocol):
    name: str

    def predict(self, examples: Sequence[QualityExample]) -> np.ndarray:
        ...


@dataclass
class ForestRegressor:
    name: str
    mode: FeatureMode
    forest: Forest

    def predict(self, examples: Sequence[QualityExample]) -> np.ndarray:
        return np.atleast_1d(self.forest.predict(feature_matrix(examples, self.mode)))


@dataclass
class CNNRegressor:
    net: QNet
    name: str = CNN_NAME

    def predict(self, examples: Sequence[QualityExample]) -> np.ndarray:
        return qnet_predict(self.net, examples)


def train_quality_rf(
    examples: Sequence[QualityExample],
    mode: FeatureMode,
    params: ForestParams,
    workers: int = 1,
) -> Forest:
    if len(examples) < 2:
        raise ConfigError("Need at least 2 quality examples", examples=len(examples))
    return fit(feature_matrix(examples, mode), targets(examples), params, workers=workers)


def train_regressor(
    name: str,
    examples: Sequence[QualityExample],
    forest_params: ForestParams,
    qnet_spec: QNetSpec,
    seed: int,
    workers: int = 1,
) -> QualityRegressor:
    """Train the regressor called ``name`` on validation-derived examples."""
    if name in RF_MODES:
        forest = train_quality_rf(examples, RF_MODES[name], forest_params, workers)
        return ForestRegressor(name=name, mode=RF_MODES[name], forest=forest)
    if name == CNN_NAME:
        net, losses = train_quality_cnn(examples, qnet_spec, seed)
        logger.info("Quality CNN trained", final_loss=round(losses[-1], 6))
        return CNNRegressor(net=net)
    raise ConfigError("Unknown regressor", regressor=name, known=REGRESSOR_NAMES)

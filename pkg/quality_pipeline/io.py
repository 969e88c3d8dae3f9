"""
File formats of the quality stage.

    bundles/<set>/p00012_m_135.bin   one uncertainty bundle per example
    quality/<set>/features.csv       feature columns + target_f1, patch_id, sample_id, combo_mask, fold
    quality/.../predictions.csv      patch_id, combo_mask, fold, q_true, q_pred, regressor_name
    models/.../<regressor>.json|.bin forest JSON or quality-CNN blob
"""

import io
from typing import List, Sequence, Tuple

import pandas as pd
import structlog

from common.artifact_store import ArtifactStore
from common.errors import ConfigError
from msme_segnet.markers import MarkerSet
from quality_features.features import FeatureMode, feature_names
from random_forest.forest import Forest
from uncertainty.bundle import bundle_from_bytes, bundle_name, bundle_to_bytes

from .dataset import QualityExample, feature_matrix
from .qnet import qnet_from_bytes, qnet_to_bytes
from .regressors import CNN_NAME, RF_MODES, CNNRegressor, ForestRegressor, QualityRegressor


logger = structlog.get_logger()

ID_COLUMNS = ["target_f1", "patch_id", "sample_id", "combo_mask", "fold"]


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def csv_to_frame(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text), float_precision="round_trip")


def bundle_prefix(set_name: str) -> str:
    return f"{ArtifactStore.BUNDLES_PREFIX}{set_name}/"


def features_key(set_name: str) -> str:
    return f"{ArtifactStore.QUALITY_PREFIX}{set_name}/features.csv"


def feature_table(examples: Sequence[QualityExample]) -> pd.DataFrame:
    """Feature CSV contents; u_a columns appear only when every bundle has u_a."""
    if not examples:
        raise ConfigError("No quality examples")
    mode = FeatureMode.BOTH if all(e.bundle.has_aleatoric for e in examples) else FeatureMode.E_ONLY
    n_markers = examples[0].availability.n_markers
    frame = pd.DataFrame(feature_matrix(examples, mode), columns=feature_names(mode, n_markers))
    frame["target_f1"] = [e.target for e in examples]
    frame["patch_id"] = [e.patch_id for e in examples]
    frame["sample_id"] = [e.sample_id for e in examples]
    frame["combo_mask"] = [e.availability.mask for e in examples]
    frame["fold"] = [e.fold for e in examples]
    return frame


def write_quality_set(store: ArtifactStore, set_name: str, examples: Sequence[QualityExample]) -> List[Tuple[str, str]]:
    """Write bundles and the feature table; returns (key, sha256) per file."""
    written = []
    prefix = bundle_prefix(set_name)
    for example in examples:
        key = prefix + bundle_name(example.patch_id, example.availability)
        written.append((key, store.write_bytes(key, bundle_to_bytes(example.bundle))))
    key = features_key(set_name)
    written.append((key, store.write_text(key, frame_to_csv(feature_table(examples)))))
    logger.info("Quality set written", set=set_name, examples=len(examples))
    return written


def read_quality_set(store: ArtifactStore, set_name: str) -> List[QualityExample]:
    """Rebuild examples from the feature table's id columns and the stored bundles."""
    frame = csv_to_frame(store.read_bytes(features_key(set_name)).decode("utf-8"))
    prefix = bundle_prefix(set_name)
    n_markers = (sum(c.startswith("combo_") for c in frame.columns) + 1).bit_length() - 1
    examples = []
    for row in frame[ID_COLUMNS].itertuples(index=False):
        name = bundle_name(int(row.patch_id), MarkerSet(int(row.combo_mask), n_markers))
        bundle = bundle_from_bytes(store.read_bytes(prefix + name))
        examples.append(QualityExample(int(row.patch_id), int(row.sample_id), int(row.fold), float(row.target_f1), bundle))
    return examples


def write_predictions(store: ArtifactStore, key: str, frame: pd.DataFrame) -> str:
    return store.write_text(key, frame_to_csv(frame))


def read_predictions(store: ArtifactStore, key: str) -> pd.DataFrame:
    return csv_to_frame(store.read_bytes(key).decode("utf-8"))


def regressor_key(prefix: str, name: str) -> str:
    return f"{prefix}{name}.bin" if name == CNN_NAME else f"{prefix}{name}.json"


def save_regressor(store: ArtifactStore, prefix: str, regressor: QualityRegressor) -> Tuple[str, str]:
    key = regressor_key(prefix, regressor.name)
    if isinstance(regressor, ForestRegressor):
        return key, store.write_text(key, regressor.forest.to_json() + "\n")
    if isinstance(regressor, CNNRegressor):
        return key, store.write_bytes(key, qnet_to_bytes(regressor.net))
    raise ConfigError("Cannot persist regressor", regressor=regressor.name)


def load_regressor(store: ArtifactStore, prefix: str, name: str) -> QualityRegressor:
    key = regressor_key(prefix, name)
    if name in RF_MODES:
        forest = Forest.from_json(store.read_bytes(key).decode("utf-8"))
        return ForestRegressor(name=name, mode=RF_MODES[name], forest=forest)
    if name == CNN_NAME:
        return CNNRegressor(net=qnet_from_bytes(store.read_bytes(key)))
    raise ConfigError("Unknown regressor", regressor=name)

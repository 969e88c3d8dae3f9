"""
Distribution features of uncertainty maps.

Per map (116 values):
    p01..p99   percentiles, linear interpolation at rank (p/100)(n-1)
    ch01..ch13 fraction of pixels <= 0.05 * i
    m1..m4     mean, population variance, skewness, non-excess kurtosis

A feature vector is [u_e block][u_a block][combination one-hot] with
absent blocks omitted. The one-hot has 2^K - 1 entries in
enumerate_combinations order.
"""

from enum import Enum
from typing import List

import numpy as np
from scipy import stats

from common.errors import ConfigError, NumericalError, ShapeError
from msme_segnet.markers import MarkerSet
from uncertainty.bundle import UncertaintyBundle

PERCENTILES = np.arange(1, 100)
HIST_THRESHOLDS = np.arange(1, 14) / 20.0
VARIANCE_FLOOR = 1e-24
BLOCK_LENGTH = len(PERCENTILES) + len(HIST_THRESHOLDS) + 4


class FeatureMode(str, Enum):
    E_ONLY = "e_only"
    A_ONLY = "a_only"
    BOTH = "both"

    @property
    def maps(self) -> List[str]:
        return {"e_only": ["u_e"], "a_only": ["u_a"], "both": ["u_e", "u_a"]}[self.value]


def _flat(values: np.ndarray) -> np.ndarray:
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        raise ShapeError("uncertainty map is empty")
    if not np.isfinite(flat).all():
        raise NumericalError("uncertainty map has non-finite values")
    return flat


def percentiles(values: np.ndarray) -> np.ndarray:
    return np.percentile(_flat(values), PERCENTILES, method="linear")


def cumulative_hist(values: np.ndarray) -> np.ndarray:
    flat = np.sort(_flat(values))
    return np.searchsorted(flat, HIST_THRESHOLDS, side="right") / flat.size


def moments(values: np.ndarray) -> np.ndarray:
    """(mean, variance, skewness, kurtosis); the last two are 0 for a (near) constant map."""
    flat = _flat(values)
    mean = flat.mean()
    variance = np.mean((flat - mean) ** 2)
    if variance < VARIANCE_FLOOR:
        return np.array([mean, variance, 0.0, 0.0])
    skew = stats.skew(flat, bias=True)
    kurt = stats.kurtosis(flat, fisher=False, bias=True)
    return np.array([mean, variance, skew, kurt])


def map_features(values: np.ndarray) -> np.ndarray:
    return np.concatenate([percentiles(values), cumulative_hist(values), moments(values)])


def combination_one_hot(availability: MarkerSet) -> np.ndarray:
    onehot = np.zeros((1 << availability.n_markers) - 1)
    onehot[availability.index] = 1.0
    return onehot


def assemble_features(bundle: UncertaintyBundle, mode: FeatureMode) -> np.ndarray:
    mode = FeatureMode(mode)
    blocks = []
    for name in mode.maps:
        if name == "u_a" and bundle.u_a is None:
            raise ConfigError("Bundle has no aleatoric map", patch_id=bundle.patch_id, mode=mode.value)
        blocks.append(map_features(bundle.u_e if name == "u_e" else bundle.u_a))
    blocks.append(combination_one_hot(bundle.availability))
    return np.concatenate(blocks)


def map_feature_names(prefix: str) -> List[str]:
    return (
        [f"{prefix}_p{p:02d}" for p in PERCENTILES]
        + [f"{prefix}_ch{i:02d}" for i in range(1, len(HIST_THRESHOLDS) + 1)]
        + [f"{prefix}_m{i}" for i in range(1, 5)]
    )


def feature_names(mode: FeatureMode, n_markers: int = 5) -> List[str]:
    names: List[str] = []
    for name in FeatureMode(mode).maps:
        names += map_feature_names(name)
    return names + [f"combo_{i:02d}" for i in range((1 << n_markers) - 1)]


def feature_length(mode: FeatureMode, n_markers: int = 5) -> int:
    return BLOCK_LENGTH * len(FeatureMode(mode).maps) + (1 << n_markers) - 1

"""
Self-check: gradient checks for every layer and loss, plus brute-force
oracles for the feature extractor, the forest split search and F1.
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from common.errors import NumericalError
from common.rng import stream
from metrics.segmentation import f1_from_masks
from nn_core.gradcheck import DEFAULT_TOLERANCE, run_suite
from quality_features.features import HIST_THRESHOLDS, PERCENTILES, cumulative_hist, moments, percentiles
from random_forest.tree import best_split


logger = structlog.get_logger()

FEATURE_TOLERANCE = 1e-12


# =============================================================================
# Reference implementations
# =============================================================================

def naive_percentile(values: np.ndarray, q: float) -> float:
    s = sorted(float(v) for v in values.reshape(-1))
    pos = (len(s) - 1) * q / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def naive_cumulative_hist(values: np.ndarray, threshold: float) -> float:
    flat = values.reshape(-1)
    return sum(1 for v in flat if v <= threshold) / len(flat)


def naive_moments(values: np.ndarray) -> Tuple[float, float, float, float]:
    flat = [float(v) for v in values.reshape(-1)]
    n = len(flat)
    mean = sum(flat) / n
    var = sum((v - mean) ** 2 for v in flat) / n
    if var == 0.0:
        return mean, 0.0, 0.0, 0.0
    skew = sum((v - mean) ** 3 for v in flat) / n / var**1.5
    kurt = sum((v - mean) ** 4 for v in flat) / n / var**2
    return mean, var, skew, kurt


def _sse(values: np.ndarray) -> float:
    return float(np.sum((values - values.mean()) ** 2)) if len(values) else 0.0


def exhaustive_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1) -> Optional[Tuple[int, float, float]]:
    """Try every feature and every midpoint, scoring both children directly."""
    n = len(y)
    if n < 2 * min_leaf:
        return None
    parent = _sse(y)
    tol = 1e-12 * max(1.0, parent)
    best: Optional[Tuple[int, float, float]] = None
    best_gain = tol
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        candidates: List[Tuple[float, float]] = []
        for a, b in zip(values[:-1], values[1:]):
            threshold = 0.5 * (a + b)
            if threshold >= b:
                threshold = float(a)
            left = X[:, f] <= threshold
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            candidates.append((threshold, parent - _sse(y[left]) - _sse(y[~left])))
        if not candidates:
            continue
        top = max(g for _, g in candidates)
        if top <= best_gain:
            continue
        threshold, gain = next(c for c in candidates if c[1] >= top - tol)
        best, best_gain = (f, float(threshold), float(gain)), top + tol
    return best


def count_f1(mask: np.ndarray, prediction: np.ndarray) -> float:
    tp = fp = fn = 0
    for y, p in zip(mask.reshape(-1), prediction.reshape(-1)):
        if y and p:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2 * tp + fp + fn)


# =============================================================================
# Checks
# =============================================================================

def check_gradients(n_seeds: int = 20) -> Dict[str, float]:
    errors = run_suite(range(n_seeds))
    failed = {name: err for name, err in errors.items() if not err < DEFAULT_TOLERANCE}
    logger.info("Gradient checks", cases=len(errors), worst=max(errors.values()), failed=sorted(failed))
    return errors


def check_features(n_maps: int = 100, seed: int = 0) -> float:
    """Worst absolute deviation from the naive references (scaled by magnitude)."""
    worst = 0.0
    for i in range(n_maps):
        rng = stream(seed, "selfcheck-features", i)
        side = int(rng.integers(2, 12))
        values = rng.gamma(2.0, 0.1, size=(side, side))
        reference = np.concatenate(
            [
                [naive_percentile(values, q) for q in PERCENTILES],
                [naive_cumulative_hist(values, t) for t in HIST_THRESHOLDS],
                naive_moments(values),
            ]
        )
        got = np.concatenate([percentiles(values), cumulative_hist(values), moments(values)])
        worst = max(worst, float(np.max(np.abs(got - reference) / np.maximum(1.0, np.abs(reference)))))
    logger.info("Feature oracle", maps=n_maps, worst=worst)
    return worst


def check_splits(n_instances: int = 1000, seed: int = 0) -> int:
    """Number of instances where best_split disagrees with the exhaustive search."""
    mismatches = 0
    for i in range(n_instances):
        rng = stream(seed, "selfcheck-splits", i)
        rows = int(rng.integers(2, 9))
        X = rng.integers(0, 4, size=(rows, 3)).astype(np.float64)
        y = rng.integers(0, 5, size=rows).astype(np.float64)
        min_leaf = int(rng.integers(1, 3))
        got = best_split(X, y, [0, 1, 2], min_leaf)
        want = exhaustive_split(X, y, min_leaf)
        if not _same_split(got, want):
            mismatches += 1
    logger.info("Split oracle", instances=n_instances, mismatches=mismatches)
    return mismatches


def _same_split(a: Optional[Tuple[int, float, float]], b: Optional[Tuple[int, float, float]]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a[0] == b[0] and a[1] == b[1] and abs(a[2] - b[2]) <= 1e-9


def check_f1(n_pairs: int = 1000, seed: int = 0) -> int:
    mismatches = 0
    for i in range(n_pairs):
        rng = stream(seed, "selfcheck-f1", i)
        density = rng.uniform(0.0, 0.5, size=2)
        mask = rng.random((16, 16)) < density[0]
        pred = rng.random((16, 16)) < density[1]
        if f1_from_masks(mask, pred) != count_f1(mask, pred):
            mismatches += 1
    logger.info("F1 oracle", pairs=n_pairs, mismatches=mismatches)
    return mismatches


def run_selfcheck(n_seeds: int = 20, seed: int = 0, sizes: Sequence[int] = (100, 1000, 1000)) -> Dict:
    """Run every check; ``failures`` lists what did not pass."""
    n_maps, n_splits, n_pairs = sizes
    gradients = check_gradients(n_seeds)
    report = {
        "gradients": gradients,
        "gradient_tolerance": DEFAULT_TOLERANCE,
        "feature_worst": check_features(n_maps, seed),
        "split_mismatches": check_splits(n_splits, seed),
        "f1_mismatches": check_f1(n_pairs, seed),
    }
    failures = sorted(name for name, err in gradients.items() if not err < DEFAULT_TOLERANCE)
    if not report["feature_worst"] <= FEATURE_TOLERANCE:
        failures.append("features")
    if report["split_mismatches"]:
        failures.append("best_split")
    if report["f1_mismatches"]:
        failures.append("f1")
    report["failures"] = failures
    return report


def raise_on_failure(report: Dict) -> None:
    if report["failures"]:
        raise NumericalError("Self-check failed", failures=report["failures"])

"""
Regression tree on flat node arrays.

Splits maximize the reduction of the sum of squared errors. Candidate
thresholds are midpoints between consecutive distinct sorted values.
Ties resolve to the lowest feature index, then the lowest threshold.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

LEAF = -1


def _tolerance(parent_sse: float) -> float:
    return 1e-12 * max(1.0, parent_sse)


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[int],
    min_leaf: int = 1,
) -> Optional[Tuple[int, float, float]]:
    """
    (feature, threshold, gain) of the best split of the rows (X, y), or None
    when no split reduces the squared error.
    """
    n = len(y)
    if n < 2 * min_leaf:
        return None
    centered = y - y.mean()
    parent_sse = float(np.sum(centered**2))
    tol = _tolerance(parent_sse)
    best: Optional[Tuple[int, float, float]] = None
    best_gain = tol

    for f in sorted(int(f) for f in features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = centered[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys * ys)[:-1]
        left_n = np.arange(1, n)
        right_n = n - left_n
        total, total_sq = csum[-1] + ys[-1], csq[-1] + ys[-1] ** 2
        valid = (xs[:-1] < xs[1:]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not valid.any():
            continue
        left_sse = csq - csum**2 / left_n
        right_sse = (total_sq - csq) - (total - csum) ** 2 / right_n
        gain = np.where(valid, parent_sse - left_sse - right_sse, -np.inf)
        top = gain.max()
        if top <= best_gain:
            continue
        i = int(np.argmax(gain >= top - tol))
        threshold = 0.5 * (xs[i] + xs[i + 1])
        if threshold >= xs[i + 1]:
            threshold = float(xs[i])
        best, best_gain = (f, float(threshold), float(gain[i])), float(top) + tol
    return best


@dataclass
class RegressionTree:
    """Node i is a leaf when feature[i] == -1; value[i] is the mean target of its rows."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def leaf_count(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self) -> int:
        depths = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.node_count else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.nonzero(active)[0]
            at = node[rows]
            go_left = X[rows, self.feature[at]] <= self.threshold[at]
            node[rows] = np.where(go_left, self.left[at], self.right[at])
            active = self.feature[node] != LEAF
        return self.value[node]

    def split_counts(self, n_features: int) -> np.ndarray:
        used = self.feature[self.feature != LEAF]
        return np.bincount(used, minlength=n_features)

    def to_dict(self) -> Dict[str, List]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "RegressionTree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            value=np.asarray(data["value"], dtype=np.float64),
            n_samples=np.asarray(data.get("n_samples", []), dtype=np.int64),
        )


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    mtry: int,
    rng: np.random.Generator,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
    max_depth: Optional[int] = None,
) -> RegressionTree:
    """Grow one tree on X[rows], y[rows], depth first with an explicit stack."""
    n_features = X.shape[1]
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    counts: List[int] = []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        counts.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.asarray(rows, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        targets = y[idx]
        value[node] = float(targets.mean())
        counts[node] = len(idx)
        if len(idx) < min_samples_split or np.ptp(targets) == 0.0:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        candidates = np.sort(rng.choice(n_features, size=mtry, replace=False))
        split = best_split(X[idx], targets, candidates, min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        go_left = X[idx, f] <= thr
        lo, hi = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, lo, hi
        stack.append((hi, idx[~go_left], depth + 1))
        stack.append((lo, idx[go_left], depth + 1))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(counts, dtype=np.int64),
    )

"""
Regression random forest.

Each tree t draws its bootstrap rows and per-node feature subsets from the
stream (seed, "tree", t), so a forest is bit-reproducible whatever the
number of worker threads.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from common.errors import ConfigError, MissingArtifactError, NumericalError, ShapeError
from common.rng import stream
from common.run_protocol import canonical_json

from .tree import RegressionTree, build_tree


logger = structlog.get_logger()

FOREST_FORMAT = "msmeq-forest/1"


class ForestParams(BaseModel):
    n_trees: int = Field(default=128, ge=1)
    mtry: Optional[int] = Field(default=None, ge=1)  # None -> max(1, n_features // 3)
    min_samples_split: int = Field(default=2, ge=2)
    min_samples_leaf: int = Field(default=1, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1)
    bootstrap: bool = True
    seed: int = Field(default=0, ge=0)

    def resolve_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else max(1, n_features // 3)
        if not 1 <= mtry <= n_features:
            raise ConfigError("mtry outside [1, n_features]", mtry=mtry, n_features=n_features)
        return mtry


@dataclass
class Forest:
    trees: List[RegressionTree]
    n_features: int
    params: ForestParams

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean of per-tree predictions, accumulated in tree order."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ShapeError("feature count differs from training", expected=self.n_features, got=X.shape[1])
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        result = total / len(self.trees)
        return result[0] if single else result

    def split_counts(self) -> np.ndarray:
        return sum(tree.split_counts(self.n_features) for tree in self.trees)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": FOREST_FORMAT,
            "n_features": self.n_features,
            "params": self.params.model_dump(mode="json"),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Forest":
        if data.get("format") != FOREST_FORMAT:
            raise ShapeError("not a forest file", format=data.get("format"))
        return cls(
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            n_features=int(data["n_features"]),
            params=ForestParams(**data["params"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _check_training_data(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ShapeError("fit expects X (n x p) and y (n)", X=X.shape, y=y.shape)
    if len(y) < 2:
        raise ShapeError("need at least 2 training rows", n=len(y))
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NumericalError("training data contains NaN or Inf")


def fit(X: np.ndarray, y: np.ndarray, params: ForestParams, workers: int = 1) -> Forest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_training_data(X, y)
    n, p = X.shape
    mtry = params.resolve_mtry(p)

    def grow(t: int) -> RegressionTree:
        rng = stream(params.seed, "tree", t)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        return build_tree(X, y, rows, mtry, rng, params.min_samples_split, params.min_samples_leaf, params.max_depth)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, range(params.n_trees)))
    else:
        trees = [grow(t) for t in range(params.n_trees)]

    forest = Forest(trees=trees, n_features=p, params=params)
    logger.info(
        "Forest trained",
        trees=params.n_trees,
        rows=n,
        features=p,
        mtry=mtry,
        mean_leaves=round(float(np.mean([t.leaf_count for t in trees])), 1),
        seed=params.seed,
    )
    return forest


def predict(forest: Forest, x: np.ndarray) -> Union[float, np.ndarray]:
    result = forest.predict(x)
    return float(result) if np.ndim(result) == 0 else result


def save_forest(forest: Forest, path: Union[str, Path]) -> str:
    text = forest.to_json()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text + "\n")
    return text


def load_forest(path: Union[str, Path]) -> Forest:
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(str(source))
    return Forest.from_json(source.read_text())

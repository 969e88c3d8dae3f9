"""
Regression random forest with exact, deterministic split search.
"""

from .forest import Forest, ForestParams, fit, load_forest, predict, save_forest
from .tree import LEAF, RegressionTree, best_split, build_tree

__all__ = [
    "Forest",
    "ForestParams",
    "fit",
    "load_forest",
    "predict",
    "save_forest",
    "LEAF",
    "RegressionTree",
    "best_split",
    "build_tree",
]

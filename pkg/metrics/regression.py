"""
Regression metrics for quality prediction.
"""

from typing import Sequence

import numpy as np

from common.errors import ShapeError


def _pair(pred: Sequence[float], true: Sequence[float]):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(true, dtype=np.float64).reshape(-1)
    if p.size == 0 or p.shape != t.shape:
        raise ShapeError("rmse/r2 need equal nonempty inputs", pred=p.shape, true=t.shape)
    return p, t


def rmse(pred: Sequence[float], true: Sequence[float]) -> float:
    p, t = _pair(pred, true)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def r2(pred: Sequence[float], true: Sequence[float]) -> float:
    """1 - SS_res / SS_tot; 0 when SS_tot = 0 < SS_res and 1 when both vanish."""
    p, t = _pair(pred, true)
    ss_res = float(np.sum((t - p) ** 2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot

"""
Adam optimizer.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from common.errors import ShapeError

from .tensor import Tensor


@dataclass
class AdamState:
    """Moment buffers per parameter, in parameter order."""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_parameters(cls, params: Sequence[Tensor], learning_rate: float = 1e-3) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
        )


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Optional[Sequence[Optional[np.ndarray]]] = None) -> None:
    """
    One bias-corrected Adam update, in place.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero (moments still decay).
    """
    if grads is None:
        grads = [p.grad for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step parameter/gradient/state count mismatch")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError("adam_step shape mismatch", index=i, param=p.shape, grad=g.shape)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

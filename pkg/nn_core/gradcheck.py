"""
Central finite-difference gradient checks.

Used by the test suite and by ``cli selfcheck``.
"""

from typing import Callable, Dict, List, Sequence

import numpy as np
import structlog

from .tensor import Tensor


logger = structlog.get_logger()

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


def numerical_gradient(fn: Callable[[], Tensor], target: Tensor, h: float = DEFAULT_STEP) -> np.ndarray:
    """d fn() / d target by central differences; fn must rebuild its graph on every call."""
    grad = np.zeros(target.shape)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = fn().item()
        flat[i] = original - h
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor); the floor absorbs difference roundoff."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = DEFAULT_STEP) -> float:
    """
    Compare backward() against finite differences for every tensor in inputs.

    Returns the largest relative error over all inputs.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros(t.shape) for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        numeric = numerical_gradient(fn, t, h)
        worst = max(worst, relative_error(a, numeric))
    return worst


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce an output to a scalar with fixed random weights (exercises every entry)."""
    weights = rng.standard_normal(out.shape)
    return (out * weights).sum()


def run_suite(seeds: Sequence[int]) -> Dict[str, float]:
    """Gradient checks for every layer kind and both losses; worst error per case."""
    from . import layers as L
    from .losses import aleatoric_loss, cross_entropy
    from .tensor import concat

    results: Dict[str, List[float]] = {}

    def record(name: str, err: float) -> None:
        results.setdefault(name, []).append(err)

    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        wts = np.random.default_rng(seed + 1000)

        conv = L.Conv2dLayer(3, 2, 3, rng)
        record("conv2d", gradcheck(lambda: weighted_sum(conv(x), np.random.default_rng(seed)), [x, conv.weight, conv.bias]))

        head = L.Conv2dLayer(3, 2, 1, rng)
        record("conv2d-1x1", gradcheck(lambda: weighted_sum(head(x), np.random.default_rng(seed)), [x, head.weight, head.bias]))

        dense = L.DenseLayer(5, 3, rng)
        v = Tensor(rng.standard_normal((2, 5)))
        record("dense", gradcheck(lambda: weighted_sum(dense(v), np.random.default_rng(seed)), [v, dense.weight, dense.bias]))

        for name, layer in (
            ("maxpool2d", L.MaxPool2dLayer(2)),
            ("maxpool2d-3x3-ceil", L.MaxPool2dLayer(3, ceil_mode=True)),
            ("sigmoid", L.SigmoidLayer()),
            ("softmax", L.SoftmaxLayer(axis=1)),
            ("upsample-nearest", L.UpsampleNearestLayer(2)),
        ):
            record(name, gradcheck(lambda layer=layer: weighted_sum(layer(x), np.random.default_rng(seed)), [x]))

        # keep ReLU inputs away from the kink
        x_off = Tensor(np.where(np.abs(x.data) < 0.05, 0.1, x.data))
        relu = L.ReLULayer()
        record("relu", gradcheck(lambda: weighted_sum(relu(x_off), np.random.default_rng(seed)), [x_off]))

        drop = L.DropoutLayer(0.3)
        record(
            "dropout",
            gradcheck(
                lambda: weighted_sum(
                    drop(x, mode=L.ForwardMode.TRAIN, rng=np.random.default_rng(seed)),
                    np.random.default_rng(seed + 1),
                ),
                [x],
            ),
        )

        y = Tensor(rng.standard_normal((2, 2, 4, 4)))
        record("concat", gradcheck(lambda: weighted_sum(concat([x, y], axis=1), np.random.default_rng(seed)), [x, y]))

        z = Tensor(rng.standard_normal((1, 2, 4, 4)))
        labels = np.zeros((1, 2, 4, 4))
        cls = wts.integers(0, 2, size=(4, 4))
        labels[0, 0] = cls == 0
        labels[0, 1] = cls == 1
        record("cross_entropy", gradcheck(lambda: cross_entropy(z.softmax(axis=1), labels), [z]))

        s = Tensor(rng.uniform(-2.0, 1.0, size=(1, 1, 4, 4)))
        record(
            "aleatoric_loss",
            gradcheck(lambda: aleatoric_loss(z, s, labels, 8, np.random.default_rng(seed)), [z, s]),
        )

    worst = {name: max(errs) for name, errs in results.items()}
    logger.info("Gradient suite finished", seeds=len(seeds), worst=max(worst.values()))
    return worst

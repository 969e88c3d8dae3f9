"""
Loss functions: cross-entropy, the noise-injected aleatoric cross-entropy,
and the L2 loss used by the quality CNN.
"""

from typing import Optional, Sequence, Union

import numpy as np

from common.errors import NumericalError, ShapeError

from .tensor import Tensor, as_tensor

PROB_FLOOR = 1e-12
LOG_VARIANCE_RANGE = (-20.0, 20.0)


def _labels_array(labels: Union[Tensor, np.ndarray]) -> np.ndarray:
    return labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)


def _pixel_weights(labels: np.ndarray, class_weight: Optional[Sequence[float]], axis: int) -> Optional[np.ndarray]:
    if class_weight is None:
        return None
    w = np.asarray(class_weight, dtype=np.float64)
    if w.shape != (labels.shape[axis],):
        raise ShapeError("class_weight needs one entry per class", classes=labels.shape[axis], got=w.shape)
    shape = [1] * labels.ndim
    shape[axis] = -1
    return (labels * w.reshape(shape)).sum(axis=axis)


def cross_entropy(
    probabilities: Tensor,
    labels: Union[Tensor, np.ndarray],
    class_weight: Optional[Sequence[float]] = None,
    axis: int = 1,
) -> Tensor:
    """
    Mean over pixels of -log(probability of the true class).

    Probabilities are clamped at 1e-12 before the log. Labels are one-hot
    along ``axis``. With ``class_weight`` each pixel's term is scaled by the
    weight of its true class.
    """
    y = _labels_array(labels)
    if probabilities.shape != y.shape:
        raise ShapeError("cross_entropy shape mismatch", probabilities=probabilities.shape, labels=y.shape)
    log_p = probabilities.clamp(lo=PROB_FLOOR).log()
    per_pixel = -(log_p * y).sum(axis=axis)
    weights = _pixel_weights(y, class_weight, axis)
    if weights is not None:
        per_pixel = per_pixel * weights
    return per_pixel.mean()


def aleatoric_loss(
    z: Tensor,
    log_variance: Tensor,
    labels: Union[Tensor, np.ndarray],
    T: int,
    rng: np.random.Generator,
    class_weight: Optional[Sequence[float]] = None,
) -> Tensor:
    """
    Stochastic cross-entropy of the T-sample mean softmax.

    y_hat = (1/T) sum_t softmax(z + u_a * eps_t), u_a = exp(s / 2), with the
    log-variance s clamped to [-20, 20] and eps_t standard normal per logit.
    The mean over samples is taken in log space (log-sum-exp) and floored at
    log(1e-12) like ``cross_entropy``.

    z: (N, C, H, W) logits; log_variance: (N, 1, H, W) or (N, H, W).
    """
    if T < 1:
        raise ValueError(f"aleatoric_loss needs T >= 1, got {T}")
    y = _labels_array(labels)
    if z.ndim != 4 or z.shape != y.shape:
        raise ShapeError("aleatoric_loss expects NCHW logits matching labels", logits=z.shape, labels=y.shape)
    n, c, h, w = z.shape
    s = as_tensor(log_variance)
    if s.shape == (n, h, w):
        s = s.reshape(n, 1, h, w)
    if s.shape != (n, 1, h, w):
        raise ShapeError("log_variance needs one value per pixel", log_variance=s.shape, logits=z.shape)

    u = (s.clamp(*LOG_VARIANCE_RANGE) * 0.5).exp()
    eps = rng.standard_normal((T, n, c, h, w))
    noisy = z.reshape(1, n, c, h, w) + u.reshape(1, n, 1, h, w) * eps
    log_probs = noisy.log_softmax(axis=2)
    picked = (log_probs * y[None]).sum(axis=2)  # T, N, H, W
    log_mean = picked.logsumexp(axis=0) - np.log(T)
    per_pixel = -log_mean.clamp(lo=np.log(PROB_FLOOR))
    weights = _pixel_weights(y, class_weight, 1)
    if weights is not None:
        per_pixel = per_pixel * weights
    loss = per_pixel.mean()
    if not np.isfinite(loss.data).all():
        raise NumericalError("aleatoric_loss is not finite")
    return loss


def mse_loss(prediction: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean squared error (the L2 loss of the quality CNN)."""
    t = _labels_array(target)
    if prediction.shape != t.shape:
        raise ShapeError("mse_loss shape mismatch", prediction=prediction.shape, target=t.shape)
    diff = prediction - t
    return (diff * diff).mean()

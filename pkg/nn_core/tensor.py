"""
Dense float64 tensors with reverse-mode differentiation.

Each differentiable operation is a ``Function`` subclass. ``Function.apply``
runs the numpy forward, checks the result is finite and, when any input
takes part in differentiation, links the output to the operation so that
``Tensor.backward()`` can walk the recorded graph (the tape) in reverse
topological order.
"""

from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from common.errors import NumericalError, ShapeError, TapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


def _as_array(data: Any) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(data, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes that broadcasting expanded to reach grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    Row-major float64 array that can participate in differentiation.

    Leaf tensors created with ``requires_grad=True`` (parameters) accumulate
    gradients in ``grad``; intermediate tensors keep a reference to the
    Function that produced them.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data: Any, requires_grad: bool = False, _ctx: Optional["Function"] = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError("item() needs a single-element tensor", shape=self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -------------------------------------------------------------------------
    # Operators
    # -------------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        total = self.sum(axis=axis, keepdims=keepdims)
        count = self.size // max(total.size, 1)
        return total * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes) or None)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def clamp(self, lo: Optional[float] = None, hi: Optional[float] = None) -> "Tensor":
        return Clamp.apply(self, lo=lo, hi=hi)

    def relu(self) -> "Tensor":
        return ReLU.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def softmax(self, axis: int = 1) -> "Tensor":
        return Softmax.apply(self, axis=axis)

    def log_softmax(self, axis: int = 1) -> "Tensor":
        return LogSoftmax.apply(self, axis=axis)

    def logsumexp(self, axis: int = 0) -> "Tensor":
        return LogSumExp.apply(self, axis=axis)

    # -------------------------------------------------------------------------
    # Differentiation
    # -------------------------------------------------------------------------

    def backward(self) -> None:
        """
        Propagate d(self)/d(leaf) into every participating leaf's ``grad``.

        self must be a scalar produced by recorded operations.
        """
        if self._ctx is None:
            raise TapeError("backward() called on a tensor with no recorded forward pass")
        if self.size != 1:
            raise TapeError("backward() requires a scalar loss", shape=self.shape)

        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._ctx.backward(g)
            for parent, pg in zip(node._ctx.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericalError("Non-finite gradient", op=type(node._ctx).__name__)
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def tensor(data: Any, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# =============================================================================
# Function base
# =============================================================================

class Function:
    """One recorded operation: forward on arrays, backward returns parent grads."""

    parents: Tuple[Tensor, ...] = ()

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        parents = tuple(as_tensor(x) for x in inputs)
        fn = cls()
        fn.parents = parents
        out = fn.forward(*[p.data for p in parents], **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericalError("Non-finite output", op=cls.__name__)
        requires_grad = any(p.requires_grad for p in parents)
        return Tensor(out, requires_grad=requires_grad, _ctx=fn if requires_grad else None)

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


# =============================================================================
# Elementwise arithmetic
# =============================================================================

class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return _unbroadcast(grad * self.y, self.x.shape), _unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    def forward(self, x, y):
        if np.any(y == 0):
            raise NumericalError("Division by zero", op="Div")
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        gx = grad / self.y
        gy = -grad * self.x / (self.y * self.y)
        return _unbroadcast(gx, self.x.shape), _unbroadcast(gy, self.y.shape)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeError("matmul needs (n,k)@(k,m)", lhs=x.shape, rhs=y.shape)
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        return grad @ self.y.T, self.x.T @ grad


# =============================================================================
# Reductions and reshapes
# =============================================================================

class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            axes = tuple(a % len(self.in_shape) for a in axes)
            for a in sorted(axes):
                grad = np.expand_dims(grad, a)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(x.transpose(self.axes))

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


# =============================================================================
# Pointwise nonlinearities
# =============================================================================

class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        if np.any(x <= 0):
            raise NumericalError("log of non-positive value", op="Log")
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Clamp(Function):
    def forward(self, x, lo=None, hi=None):
        self.mask = np.ones(x.shape, dtype=bool)
        if lo is not None:
            self.mask &= x >= lo
        if hi is not None:
            self.mask &= x <= hi
        return np.clip(x, lo, hi)

    def backward(self, grad):
        return (grad * self.mask,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


def softmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Function):
    def forward(self, x, axis=1):
        self.axis = axis
        self.out = softmax_array(x, axis)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x, axis=1):
        self.axis = axis
        out = x - logsumexp(x, axis=axis, keepdims=True)
        self.soft = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.soft * grad.sum(axis=self.axis, keepdims=True),)


class LogSumExp(Function):
    def forward(self, x, axis=0):
        self.axis = axis
        self.weights = softmax_array(x, axis)
        return logsumexp(x, axis=axis)

    def backward(self, grad):
        return (np.expand_dims(grad, self.axis) * self.weights,)


# =============================================================================
# Image operations (NCHW)
# =============================================================================

class Conv2d(Function):
    """Stride-1 'same' cross-correlation with an odd k×k kernel."""

    def forward(self, x, w, b):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError("conv2d input/weight mismatch", input=x.shape, weight=w.shape)
        k = w.shape[-1]
        if w.shape[-2] != k or k % 2 == 0:
            raise ShapeError("conv2d kernel must be odd and square", weight=w.shape)
        self.k = k
        self.pad = k // 2
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self.windows = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,H,W,k,k
        self.w = w
        out = np.einsum("nchwij,ocij->nohw", self.windows, w, optimize=True)
        return out + b[None, :, None, None]

    def backward(self, grad):
        k, p = self.k, self.pad
        gw = np.einsum("nohw,nchwij->ocij", grad, self.windows, optimize=True)
        gb = grad.sum(axis=(0, 2, 3))
        q = k - 1 - p
        gp = np.pad(grad, ((0, 0), (0, 0), (q, q), (q, q))) if q else grad
        gwin = sliding_window_view(gp, (k, k), axis=(2, 3))  # N,O,H,W,k,k
        gx = np.einsum("nohwij,ocij->nchw", gwin, self.w[:, :, ::-1, ::-1], optimize=True)
        return gx, gw, gb


class Linear(Function):
    """x @ w.T + b for x of shape (N, in)."""

    def forward(self, x, w, b):
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeError("dense input/weight mismatch", input=x.shape, weight=w.shape)
        self.x, self.w = x, w
        return x @ w.T + b

    def backward(self, grad):
        return grad @ self.w, grad.T @ self.x, grad.sum(axis=0)


class MaxPool2d(Function):
    """Non-overlapping k×k max pooling; ceil mode pads the border with -inf."""

    def forward(self, x, k=2, ceil_mode=False):
        if x.ndim != 4:
            raise ShapeError("maxpool2d expects NCHW", input=x.shape)
        n, c, h, w = x.shape
        if ceil_mode:
            ho, wo = -(-h // k), -(-w // k)
        else:
            ho, wo = h // k, w // k
        if ho == 0 or wo == 0:
            raise ShapeError("maxpool2d input smaller than kernel", input=x.shape, kernel=k)
        self.in_shape = x.shape
        self.k = k
        self.out_hw = (ho, wo)
        hp, wp = ho * k, wo * k
        if hp > h or wp > w:
            xp = np.full((n, c, hp, wp), -np.inf)
            xp[:, :, :h, :w] = x
        else:
            xp = x[:, :, :hp, :wp]
        blocks = xp.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
        self.argmax = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.in_shape
        ho, wo = self.out_hw
        k = self.k
        blocks = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(blocks, self.argmax[..., None], grad[..., None], axis=-1)
        full = blocks.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        gx = np.zeros(self.in_shape)
        hh, ww = min(h, ho * k), min(w, wo * k)
        gx[:, :, :hh, :ww] = full[:, :, :hh, :ww]
        return (gx,)


class UpsampleNearest(Function):
    def forward(self, x, factor=2):
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


# =============================================================================
# Functional helpers
# =============================================================================

def concat(tensors: Sequence[ArrayLike], axis: int = 1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def conv2d(x: ArrayLike, weight: ArrayLike, bias: ArrayLike) -> Tensor:
    return Conv2d.apply(x, weight, bias)


def linear(x: ArrayLike, weight: ArrayLike, bias: ArrayLike) -> Tensor:
    return Linear.apply(x, weight, bias)


def max_pool2d(x: ArrayLike, k: int = 2, ceil_mode: bool = False) -> Tensor:
    return MaxPool2d.apply(x, k=k, ceil_mode=ceil_mode)


def upsample_nearest(x: ArrayLike, factor: int = 2) -> Tensor:
    return UpsampleNearest.apply(x, factor=factor)

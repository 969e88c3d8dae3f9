"""
Layer set for the segmentation UNet and the quality CNN.

Layers are small ``Module`` objects that own their parameters and expose a
uniform call signature ``layer(x, mode=..., rng=...)``. ``LayerSpec`` is the
serializable description written into checkpoint headers.
"""

from collections import OrderedDict
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from common.errors import ShapeError

from .tensor import (
    Tensor,
    concat,
    conv2d,
    linear,
    max_pool2d,
    upsample_nearest,
)

RandomSource = Union[np.random.Generator, Sequence[np.random.Generator], None]


class ForwardMode(str, Enum):
    """How stochastic layers behave during a forward pass."""
    TRAIN = "train"          # dropout active, gradients recorded by the caller
    MC_INFER = "mc_infer"    # MC dropout keeps sampling, conventional dropout is off
    DET_INFER = "det_infer"  # every dropout is the identity


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    MAXPOOL2D = "maxpool2d"
    DENSE = "dense"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    DROPOUT = "dropout"
    UPSAMPLE_NEAREST = "upsample-nearest"
    CONCAT = "concat"


class LayerSpec(BaseModel):
    """Kind plus the hyperparameters that kind uses."""
    kind: LayerKind
    in_features: Optional[int] = None   # conv input channels / dense inputs
    out_features: Optional[int] = None  # conv filters / dense nodes
    kernel: int = 3
    pool: int = 2
    ceil_mode: bool = False
    p: float = Field(default=0.0, ge=0.0, lt=1.0)
    mc: bool = True
    factor: int = 2
    axis: int = 1

    @model_validator(mode="after")
    def _check(self) -> "LayerSpec":
        if self.kind in (LayerKind.CONV2D, LayerKind.DENSE):
            if not self.in_features or not self.out_features:
                raise ValueError(f"{self.kind.value} needs in_features and out_features")
        if self.kind == LayerKind.CONV2D and self.kernel % 2 == 0:
            raise ValueError("conv2d kernel must be odd")
        if self.kind == LayerKind.MAXPOOL2D and self.pool < 1:
            raise ValueError("pool extent must be positive")
        return self


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# =============================================================================
# Module container
# =============================================================================

class Module:
    """Owns parameters and child modules in registration order."""

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_parameter(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield f"{prefix}{name}", p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: "dict[str, np.ndarray]") -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError("state dict keys differ", missing=missing, unexpected=unexpected)
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError("state dict shape mismatch", name=name, expected=p.shape, got=value.shape)
            p.data = np.ascontiguousarray(value)
            p.grad = None


class Layer(Module):
    spec: LayerSpec

    def __call__(self, x, mode: ForwardMode = ForwardMode.DET_INFER, rng: RandomSource = None) -> Tensor:
        raise NotImplementedError


# =============================================================================
# Parameterized layers
# =============================================================================

class Conv2dLayer(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.CONV2D, in_features=in_channels, out_features=out_channels, kernel=kernel)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.weight = self.add_parameter("weight", kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = self.add_parameter("bias", np.zeros(out_channels))

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return conv2d(x, self.weight, self.bias)


class DenseLayer(Layer):
    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.DENSE, in_features=in_features, out_features=out_features)
        rng = rng or np.random.default_rng(0)
        self.weight = self.add_parameter("weight", kaiming_uniform(rng, (out_features, in_features), in_features))
        self.bias = self.add_parameter("bias", np.zeros(out_features))

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        if isinstance(x, Tensor) and x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
        return linear(x, self.weight, self.bias)


# =============================================================================
# Parameter-free layers
# =============================================================================

class MaxPool2dLayer(Layer):
    def __init__(self, pool: int = 2, ceil_mode: bool = False):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.MAXPOOL2D, pool=pool, ceil_mode=ceil_mode)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return max_pool2d(x, k=self.spec.pool, ceil_mode=self.spec.ceil_mode)


class ReLULayer(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.RELU)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return (x if isinstance(x, Tensor) else Tensor(x)).relu()


class SigmoidLayer(Layer):
    def __init__(self):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.SIGMOID)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return (x if isinstance(x, Tensor) else Tensor(x)).sigmoid()


class SoftmaxLayer(Layer):
    def __init__(self, axis: int = 1):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.SOFTMAX, axis=axis)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return (x if isinstance(x, Tensor) else Tensor(x)).softmax(axis=self.spec.axis)


class UpsampleNearestLayer(Layer):
    def __init__(self, factor: int = 2):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.UPSAMPLE_NEAREST, factor=factor)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return upsample_nearest(x, factor=self.spec.factor)


class ConcatLayer(Layer):
    def __init__(self, axis: int = 1):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.CONCAT, axis=axis)

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        return concat(list(x), axis=self.spec.axis)


class DropoutLayer(Layer):
    """
    Inverted dropout: kept units are scaled by 1/(1-p).

    ``mc=True`` keeps sampling in MC_INFER mode; ``mc=False`` is the
    conventional layer that only drops at training time. ``rng`` may be a
    single generator or one generator per batch item.
    """

    def __init__(self, p: float, mc: bool = True):
        super().__init__()
        self.spec = LayerSpec(kind=LayerKind.DROPOUT, p=p, mc=mc)

    def active(self, mode: ForwardMode) -> bool:
        if mode == ForwardMode.TRAIN:
            return True
        return mode == ForwardMode.MC_INFER and self.spec.mc

    def __call__(self, x, mode=ForwardMode.DET_INFER, rng=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        p = self.spec.p
        if p == 0.0 or not self.active(mode):
            return x
        if rng is None:
            raise ValueError("dropout in a stochastic mode needs a random source")
        if isinstance(rng, np.random.Generator):
            u = rng.random(x.shape)
        else:
            if len(rng) != x.shape[0]:
                raise ShapeError("need one random stream per batch item", streams=len(rng), batch=x.shape[0])
            u = np.stack([g.random(x.shape[1:]) for g in rng])
        mask = (u >= p) / (1.0 - p)
        return x * mask


def build_layer(spec: LayerSpec, rng: Optional[np.random.Generator] = None) -> Layer:
    """Instantiate a layer from its spec (parameters initialized from rng)."""
    if spec.kind == LayerKind.CONV2D:
        return Conv2dLayer(spec.in_features, spec.out_features, spec.kernel, rng)
    if spec.kind == LayerKind.DENSE:
        return DenseLayer(spec.in_features, spec.out_features, rng)
    if spec.kind == LayerKind.MAXPOOL2D:
        return MaxPool2dLayer(spec.pool, spec.ceil_mode)
    if spec.kind == LayerKind.RELU:
        return ReLULayer()
    if spec.kind == LayerKind.SIGMOID:
        return SigmoidLayer()
    if spec.kind == LayerKind.SOFTMAX:
        return SoftmaxLayer(spec.axis)
    if spec.kind == LayerKind.DROPOUT:
        return DropoutLayer(spec.p, spec.mc)
    if spec.kind == LayerKind.UPSAMPLE_NEAREST:
        return UpsampleNearestLayer(spec.factor)
    return ConcatLayer(spec.axis)


def forward(
    layer: Layer,
    x: Union[Tensor, np.ndarray, Sequence[Tensor]],
    mode: ForwardMode = ForwardMode.DET_INFER,
    rng: RandomSource = None,
) -> Tensor:
    """Apply one layer; non-finite outputs raise NumericalError from the op."""
    return layer(x, mode=mode, rng=rng)

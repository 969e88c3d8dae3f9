"""
Minimal float64 tensor numerics with reverse-mode differentiation.
"""

from .checkpoint import decode_blob, encode_blob, read_blob, write_blob
from .gradcheck import gradcheck, numerical_gradient, relative_error
from .layers import (
    ConcatLayer,
    Conv2dLayer,
    DenseLayer,
    DropoutLayer,
    ForwardMode,
    Layer,
    LayerKind,
    LayerSpec,
    MaxPool2dLayer,
    Module,
    ReLULayer,
    SigmoidLayer,
    SoftmaxLayer,
    UpsampleNearestLayer,
    build_layer,
    forward,
)
from .losses import aleatoric_loss, cross_entropy, mse_loss
from .optim import AdamState, adam_step
from .tensor import Tensor, softmax_array, tensor

__all__ = [
    "Tensor",
    "tensor",
    "softmax_array",
    "ForwardMode",
    "Layer",
    "LayerKind",
    "LayerSpec",
    "Module",
    "ConcatLayer",
    "Conv2dLayer",
    "DenseLayer",
    "DropoutLayer",
    "MaxPool2dLayer",
    "ReLULayer",
    "SigmoidLayer",
    "SoftmaxLayer",
    "UpsampleNearestLayer",
    "build_layer",
    "forward",
    "cross_entropy",
    "aleatoric_loss",
    "mse_loss",
    "AdamState",
    "adam_step",
    "gradcheck",
    "numerical_gradient",
    "relative_error",
    "encode_blob",
    "decode_blob",
    "read_blob",
    "write_blob",
]

"""
Quality CNN baseline.

C(4) -> MP -> C(8) -> MP -> C(16) -> MP -> C(32) -> MP -> C(64) -> FC(128) -> FC(1)
with 3x3 convolutions, 3x3 ceil-mode max pooling and ReLU after every
convolution and the hidden FC. The output layer is linear. Input is the
(u_e, u_a) stack cropped or zero-padded to a square extent.
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from common.errors import ConfigError, MissingArtifactError, ShapeError
from common.rng import stream
from nn_core.checkpoint import decode_blob, encode_blob, to_float32_precision
from nn_core.layers import Conv2dLayer, DenseLayer, MaxPool2dLayer, Module
from nn_core.losses import mse_loss
from nn_core.optim import AdamState, adam_step
from nn_core.tensor import Tensor

from .dataset import QualityExample


logger = structlog.get_logger()

QNET_KIND = "quality-cnn"


class QNetSpec(BaseModel):
    widths: List[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64])
    hidden: int = Field(default=128, ge=1)
    pool: int = Field(default=3, ge=2)
    input_extent: int = Field(default=64, ge=1)
    in_channels: int = Field(default=2, ge=1)
    batch_size: int = Field(default=2, ge=1)
    epochs: int = Field(default=100, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)

    def spatial_after_pools(self) -> int:
        extent = self.input_extent
        for _ in range(len(self.widths) - 1):
            extent = -(-extent // self.pool)
        return extent


class QNet(Module):
    def __init__(self, spec: QNetSpec, seed: int):
        super().__init__()
        if not spec.widths:
            raise ConfigError("QNet needs at least one conv layer")
        self.spec = spec
        self.seed = seed
        self.convs: List[Conv2dLayer] = []
        in_channels = spec.in_channels
        for i, width in enumerate(spec.widths):
            conv = Conv2dLayer(in_channels, width, 3, stream(seed, "qnet-init", i))
            self.convs.append(self.add_module(f"conv{i}", conv))
            in_channels = width
        self.pool = MaxPool2dLayer(spec.pool, ceil_mode=True)
        side = spec.spatial_after_pools()
        n = len(spec.widths)
        self.fc1 = self.add_module("fc1", DenseLayer(in_channels * side * side, spec.hidden, stream(seed, "qnet-init", n)))
        self.fc2 = self.add_module("fc2", DenseLayer(spec.hidden, 1, stream(seed, "qnet-init", n + 1)))

    def forward(self, x: Union[Tensor, np.ndarray]) -> Tensor:
        """N x C x E x E -> N x 1."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        e = self.spec.input_extent
        if x.ndim != 4 or x.shape[1:] != (self.spec.in_channels, e, e):
            raise ShapeError("QNet input shape mismatch", expected=(self.spec.in_channels, e, e), got=x.shape)
        h = x
        for i, conv in enumerate(self.convs):
            if i > 0:
                h = self.pool(h)
            h = conv(h).relu()
        h = self.fc1(h).relu()
        return self.fc2(h)

    __call__ = forward


def fit_extent(planes: np.ndarray, extent: int) -> np.ndarray:
    """Center-crop or zero-pad C x H x W planes to C x extent x extent."""
    out = np.zeros((planes.shape[0], extent, extent))
    h, w = planes.shape[1:]
    sh, sw = max(0, (h - extent) // 2), max(0, (w - extent) // 2)
    dh, dw = max(0, (extent - h) // 2), max(0, (extent - w) // 2)
    ch, cw = min(h, extent), min(w, extent)
    out[:, dh : dh + ch, dw : dw + cw] = planes[:, sh : sh + ch, sw : sw + cw]
    return out


def qnet_inputs(examples: Sequence[QualityExample], extent: int) -> np.ndarray:
    return np.stack([fit_extent(e.map_stack(), extent) for e in examples])


def train_quality_cnn(examples: Sequence[QualityExample], spec: QNetSpec, seed: int) -> Tuple[QNet, List[float]]:
    """Adam on mean squared error for spec.epochs epochs; returns the final net and per-epoch losses."""
    if not examples:
        raise ConfigError("No quality examples for the CNN")
    net = QNet(spec, seed)
    inputs = qnet_inputs(examples, spec.input_extent)
    y = np.array([e.target for e in examples], dtype=np.float64)
    params = net.parameters()
    state = AdamState.for_parameters(params, spec.learning_rate)
    losses: List[float] = []
    logger.info("Training quality CNN", examples=len(examples), parameters=net.parameter_count(), epochs=spec.epochs, seed=seed)

    for epoch in range(spec.epochs):
        order = stream(seed, "qnet-shuffle", epoch).permutation(len(examples))
        total = 0.0
        for start in range(0, len(order), spec.batch_size):
            batch = order[start : start + spec.batch_size]
            pred = net.forward(inputs[batch]).reshape(len(batch))
            loss = mse_loss(pred, y[batch])
            net.zero_grad()
            loss.backward()
            adam_step(state, params)
            total += loss.item() * len(batch)
        losses.append(total / len(order))
        if (epoch + 1) % 10 == 0 or epoch + 1 == spec.epochs:
            logger.info("Quality CNN epoch", epoch=epoch + 1, loss=round(losses[-1], 6))

    for p in params:
        p.data = to_float32_precision(p.data)
        p.grad = None
    return net, losses


def qnet_predict(net: QNet, examples: Sequence[QualityExample], batch_size: int = 16) -> np.ndarray:
    inputs = qnet_inputs(examples, net.spec.input_extent)
    out = [net.forward(inputs[i : i + batch_size]).data.reshape(-1) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def qnet_to_bytes(net: QNet) -> bytes:
    meta = {"kind": QNET_KIND, "spec": net.spec.model_dump(), "seed": net.seed, "parameter_count": net.parameter_count()}
    return encode_blob(meta, net.state_dict())


def qnet_from_bytes(data: bytes) -> QNet:
    meta, arrays = decode_blob(data)
    if meta.get("kind") != QNET_KIND:
        raise ShapeError("checkpoint does not hold a quality CNN", kind=meta.get("kind"))
    net = QNet(QNetSpec(**meta["spec"]), int(meta["seed"]))
    net.load_state_dict(arrays)
    return net


def load_qnet(path: Union[str, Path]) -> QNet:
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(str(source))
    return qnet_from_bytes(source.read_bytes())

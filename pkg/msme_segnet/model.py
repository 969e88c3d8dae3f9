"""
MS-ME UNet.

A small UNet in which every encoder stage, the bottleneck and every decoder
stage ends in a Marker Excite gate driven by the K-length availability
vector. Missing marker channels are zero-filled, so one network serves all
2^K - 1 combinations.

Variants:
    plain          logits only
    epistemic(p)   MC dropout after the convolutions, logits only
    aleatoric      logits plus a 1x1 log-variance head
    combined(p)    MC dropout and the log-variance head
    conventional(p) dropout that only samples while training
"""

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field, model_validator

from common.errors import ConfigError, MarkerSetError, MissingArtifactError, ShapeError
from common.rng import stream
from nn_core.checkpoint import decode_blob, encode_blob
from nn_core.layers import (
    Conv2dLayer,
    DenseLayer,
    DropoutLayer,
    ForwardMode,
    MaxPool2dLayer,
    Module,
    RandomSource,
    UpsampleNearestLayer,
)
from nn_core.tensor import Tensor, concat

from .markers import MarkerSet


logger = structlog.get_logger()

MODEL_KIND = "msme-unet"


class VariantKind(str, Enum):
    PLAIN = "plain"
    EPISTEMIC = "epistemic"
    ALEATORIC = "aleatoric"
    COMBINED = "combined"
    CONVENTIONAL = "conventional"


_DROPOUT_KINDS = (VariantKind.EPISTEMIC, VariantKind.COMBINED, VariantKind.CONVENTIONAL)
_VARIANT_PATTERN = re.compile(r"^\s*([a-z]+)\s*(?:\(\s*(?:p\s*=\s*)?([0-9.]+)\s*(,\s*last)?\s*\))?\s*$")


class SegVariant(BaseModel):
    """Variant tag with its dropout probability and placement."""

    kind: VariantKind = VariantKind.PLAIN
    p: float = Field(default=0.0, ge=0.0, lt=1.0)
    last_only: bool = False

    @model_validator(mode="after")
    def _check(self) -> "SegVariant":
        if self.kind not in _DROPOUT_KINDS and (self.p != 0.0 or self.last_only):
            raise ValueError(f"variant {self.kind.value} has no dropout")
        return self

    @classmethod
    def parse(cls, text: str) -> "SegVariant":
        """Parse ``plain``, ``aleatoric``, ``combined(0.2)``, ``epistemic(p=0.5, last)``."""
        match = _VARIANT_PATTERN.match(text.lower())
        if not match:
            raise ConfigError("Unrecognized model variant", variant=text)
        name, p, last = match.groups()
        try:
            return cls(kind=VariantKind(name), p=float(p) if p else 0.0, last_only=bool(last))
        except ValueError as exc:
            raise ConfigError("Invalid model variant", variant=text, reason=str(exc)) from exc

    @property
    def has_dropout(self) -> bool:
        return self.kind in _DROPOUT_KINDS

    @property
    def mc_dropout(self) -> bool:
        return self.kind in (VariantKind.EPISTEMIC, VariantKind.COMBINED)

    @property
    def has_variance_head(self) -> bool:
        return self.kind in (VariantKind.ALEATORIC, VariantKind.COMBINED)

    @property
    def label(self) -> str:
        if not self.has_dropout:
            return self.kind.value
        suffix = ",last" if self.last_only else ""
        return f"{self.kind.value}(p={self.p:g}{suffix})"


class ArchConfig(BaseModel):
    """UNet shape. Widths double per level starting at base_width."""

    depth: int = Field(default=3, ge=1)
    base_width: int = Field(default=16, ge=4)
    patch_extent: int = Field(default=64, ge=1)
    n_markers: int = Field(default=5, ge=1)
    reduction: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def _check_extent(self) -> "ArchConfig":
        if self.patch_extent % (2**self.depth) != 0:
            raise ValueError(f"patch_extent {self.patch_extent} is not divisible by 2^{self.depth}")
        return self

    def widths(self) -> List[int]:
        """Channel count per level, bottleneck last."""
        return [self.base_width * 2**level for level in range(self.depth + 1)]


@dataclass
class SegOutput:
    logits: Tensor
    log_variance: Optional[Tensor] = None

    def tensors(self) -> List[Tensor]:
        return [t for t in (self.logits, self.log_variance) if t is not None]


class _InitStreams:
    """Hands out one init stream per parameterized layer, in construction order."""

    def __init__(self, seed: int):
        self.seed = seed
        self.counter = 0

    def __call__(self) -> np.random.Generator:
        rng = stream(self.seed, "init", self.counter)
        self.counter += 1
        return rng


def _availability_array(availability: Union[MarkerSet, np.ndarray, Sequence[MarkerSet]], batch: int) -> np.ndarray:
    if isinstance(availability, MarkerSet):
        return np.tile(availability.vector(), (batch, 1))
    if isinstance(availability, np.ndarray):
        arr = np.asarray(availability, dtype=np.float64)
        return arr.reshape(1, -1) if arr.ndim == 1 else arr
    return np.stack([a.vector() for a in availability])


# =============================================================================
# Marker Excite
# =============================================================================

class MarkerExcite(Module):
    """g = sigmoid(FC2(relu(FC1(a)))) applied channel-wise."""

    def __init__(self, n_markers: int, channels: int, reduction: int = 2, rng: Optional[np.random.Generator] = None):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.fc1 = self.add_module("fc1", DenseLayer(n_markers, hidden, rng))
        self.fc2 = self.add_module("fc2", DenseLayer(hidden, channels, rng))

    def gate(self, availability: np.ndarray) -> Tensor:
        return self.fc2(self.fc1(Tensor(availability)).relu()).sigmoid()

    def __call__(self, features: Tensor, availability: np.ndarray) -> Tensor:
        if features.ndim != 4 or features.shape[1] != self.channels:
            raise ShapeError("ME gate channel mismatch", gate=self.channels, features=features.shape)
        g = self.gate(availability)
        return features * g.reshape(g.shape[0], self.channels, 1, 1)


def marker_excite(
    features: Tensor,
    availability: Union[MarkerSet, np.ndarray],
    gate: MarkerExcite,
) -> Tensor:
    """Scale feature channels by the availability-conditioned gate."""
    features = features if isinstance(features, Tensor) else Tensor(features)
    return gate(features, _availability_array(availability, features.shape[0]))


# =============================================================================
# UNet stages
# =============================================================================

class ConvStage(Module):
    """Two 3x3 conv + ReLU, each optionally followed by dropout, then an ME gate."""

    def __init__(self, in_channels: int, out_channels: int, arch: ArchConfig, dropout: Optional[DropoutLayer], init: _InitStreams):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv2dLayer(in_channels, out_channels, 3, init()))
        self.conv2 = self.add_module("conv2", Conv2dLayer(out_channels, out_channels, 3, init()))
        self.excite = self.add_module("excite", MarkerExcite(arch.n_markers, out_channels, arch.reduction, init()))
        self.dropout = dropout

    def _drop(self, h: Tensor, mode: ForwardMode, rngs: RandomSource) -> Tensor:
        return self.dropout(h, mode=mode, rng=rngs) if self.dropout is not None else h

    def __call__(self, x: Tensor, availability: np.ndarray, mode: ForwardMode, rngs: RandomSource) -> Tensor:
        h = self._drop(self.conv1(x).relu(), mode, rngs)
        h = self._drop(self.conv2(h).relu(), mode, rngs)
        return self.excite(h, availability)


class UpStage(Module):
    """Nearest upsample, 3x3 conv + ReLU, skip concatenation, then a ConvStage."""

    def __init__(self, in_channels: int, out_channels: int, arch: ArchConfig, dropout: Optional[DropoutLayer], init: _InitStreams):
        super().__init__()
        self.upsample = UpsampleNearestLayer(2)
        self.up_conv = self.add_module("up_conv", Conv2dLayer(in_channels, out_channels, 3, init()))
        self.block = self.add_module("block", ConvStage(2 * out_channels, out_channels, arch, dropout, init))
        self.dropout = dropout

    def __call__(self, x: Tensor, skip: Tensor, availability: np.ndarray, mode: ForwardMode, rngs: RandomSource) -> Tensor:
        h = self.up_conv(self.upsample(x)).relu()
        if self.dropout is not None:
            h = self.dropout(h, mode=mode, rng=rngs)
        return self.block(concat([h, skip], axis=1), availability, mode, rngs)


class MSMEUNet(Module):
    """Segmentation network; see module docstring for the variants."""

    def __init__(self, arch: ArchConfig, variant: SegVariant, seed: int):
        super().__init__()
        self.arch = arch
        self.variant = variant
        self.seed = seed
        init = _InitStreams(seed)
        widths = arch.widths()

        dropout = DropoutLayer(variant.p, mc=variant.mc_dropout) if variant.has_dropout else None
        per_conv = dropout if not variant.last_only else None
        self.final_dropout = dropout if variant.last_only else None

        self.encoders: List[ConvStage] = []
        in_channels = arch.n_markers
        for level, width in enumerate(widths):
            stage = ConvStage(in_channels, width, arch, per_conv, init)
            self.encoders.append(self.add_module(f"enc{level}", stage))
            in_channels = width
        self.pool = MaxPool2dLayer(2)

        self.decoders: List[UpStage] = []
        for level in reversed(range(arch.depth)):
            stage = UpStage(widths[level + 1], widths[level], arch, per_conv, init)
            self.decoders.append(self.add_module(f"dec{level}", stage))

        self.head = self.add_module("head", Conv2dLayer(widths[0], 2, 1, init()))
        self.variance_head: Optional[Conv2dLayer] = None
        if variant.has_variance_head:
            self.variance_head = self.add_module("variance_head", Conv2dLayer(widths[0], 1, 1, init()))

    @property
    def n_markers(self) -> int:
        return self.arch.n_markers

    def stochastic(self, mode: ForwardMode) -> bool:
        if not self.variant.has_dropout or self.variant.p == 0.0:
            return False
        return mode == ForwardMode.TRAIN or (mode == ForwardMode.MC_INFER and self.variant.mc_dropout)

    def forward(
        self,
        x: Union[Tensor, np.ndarray],
        availability: Union[MarkerSet, np.ndarray, Sequence[MarkerSet]],
        mode: ForwardMode = ForwardMode.DET_INFER,
        rngs: RandomSource = None,
    ) -> SegOutput:
        """Batched forward on N x K x H x W input with an N x K availability matrix."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.arch.n_markers:
            raise ShapeError("input must be N x K x H x W", shape=x.shape, n_markers=self.arch.n_markers)
        step = 2**self.arch.depth
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError("patch extent incompatible with depth", shape=x.shape, depth=self.arch.depth)
        avail = _availability_array(availability, x.shape[0])
        if avail.shape[1] != self.arch.n_markers:
            raise ShapeError("availability vector length differs from K", shape=avail.shape)

        skips: List[Tensor] = []
        h = x
        for stage in self.encoders[:-1]:
            h = stage(h, avail, mode, rngs)
            skips.append(h)
            h = self.pool(h)
        h = self.encoders[-1](h, avail, mode, rngs)
        for stage, skip in zip(self.decoders, reversed(skips)):
            h = stage(h, skip, avail, mode, rngs)
        if self.final_dropout is not None:
            h = self.final_dropout(h, mode=mode, rng=rngs)

        logits = self.head(h)
        log_variance = self.variance_head(h) if self.variance_head is not None else None
        return SegOutput(logits, log_variance)

    __call__ = forward


SegModel = MSMEUNet


def build_model(cfg: ArchConfig, variant: SegVariant, seed: int) -> MSMEUNet:
    model = MSMEUNet(cfg, variant, seed)
    logger.info(
        "Segmentation model built",
        variant=variant.label,
        depth=cfg.depth,
        base_width=cfg.base_width,
        parameters=model.parameter_count(),
        seed=seed,
    )
    return model


def seg_forward(
    model: MSMEUNet,
    patch: np.ndarray,
    availability: MarkerSet,
    mode: ForwardMode = ForwardMode.DET_INFER,
    rng: Optional[np.random.Generator] = None,
) -> SegOutput:
    """
    Single-patch forward: K x H x W in, logits 2 x H x W and log-variance
    H x W (variance variants only) out.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 3:
        raise ShapeError("patch must be K x H x W", shape=patch.shape)
    missing = ~availability.vector().astype(bool)
    if missing.any() and np.any(patch[missing] != 0.0):
        raise MarkerSetError("channels outside the availability set must be zero-filled", availability=availability.name)
    _, height, width = patch.shape
    out = model.forward(patch[None], availability, mode, [rng] if rng is not None else None)
    logits = out.logits.reshape(2, height, width)
    log_variance = out.log_variance.reshape(height, width) if out.log_variance is not None else None
    return SegOutput(logits, log_variance)


# =============================================================================
# Persistence
# =============================================================================

def model_to_bytes(model: MSMEUNet) -> bytes:
    meta = {
        "kind": MODEL_KIND,
        "arch": model.arch.model_dump(),
        "variant": model.variant.model_dump(mode="json"),
        "seed": model.seed,
        "parameter_count": model.parameter_count(),
    }
    return encode_blob(meta, model.state_dict())


def model_from_bytes(data: bytes) -> MSMEUNet:
    meta, arrays = decode_blob(data)
    if meta.get("kind") != MODEL_KIND:
        raise ShapeError("checkpoint does not hold a segmentation model", kind=meta.get("kind"))
    model = MSMEUNet(ArchConfig(**meta["arch"]), SegVariant(**meta["variant"]), int(meta["seed"]))
    model.load_state_dict(arrays)
    return model


def save_model(model: MSMEUNet, path: Union[str, Path]) -> bytes:
    data = model_to_bytes(model)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(data)
    return data


def load_model(path: Union[str, Path]) -> MSMEUNet:
    source = Path(path)
    if not source.exists():
        raise MissingArtifactError(str(source))
    return model_from_bytes(source.read_bytes())

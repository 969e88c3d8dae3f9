"""
Uncertainty inference: MC-dropout epistemic maps, single-pass aleatoric
maps, and both from the combined model.

Every MC pass t draws from its own stream keyed by
(seed, "mc", patch_id, combination mask, t). Passes are evaluated in
fixed-size chunks along the batch axis and chunks may run on worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from common.errors import ConfigError
from common.rng import stream
from msme_segnet.markers import MarkerSet
from msme_segnet.model import SegOutput, SegVariant
from nn_core.layers import ForwardMode
from nn_core.losses import LOG_VARIANCE_RANGE
from nn_core.tensor import softmax_array

from .bundle import UncertaintyBundle


logger = structlog.get_logger()

DEFAULT_SAMPLES = 50


class UncertaintyModel(Protocol):
    variant: SegVariant

    def forward(self, x, availability, mode: ForwardMode = ForwardMode.DET_INFER, rngs=None) -> SegOutput:
        ...

    def stochastic(self, mode: ForwardMode) -> bool:
        ...


class InferenceConfig(BaseModel):
    samples: int = Field(default=DEFAULT_SAMPLES, ge=1)
    chunk_size: int = Field(default=10, ge=1)
    workers: int = Field(default=1, ge=1)


@dataclass(frozen=True)
class MCStreams:
    """Per-pass generator factory for one patch."""

    seed: int
    patch_id: int
    combination: int = 0

    def __call__(self, t: int) -> np.random.Generator:
        return stream(self.seed, "mc", self.patch_id, self.combination, t)


RandomArg = Union[MCStreams, np.random.Generator, Callable[[int], np.random.Generator]]


def _as_streams(rng: RandomArg, patch_id: int) -> Callable[[int], np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        base = int(rng.integers(0, 2**62))
        return MCStreams(base, patch_id)
    return rng


def _single_pass(model: UncertaintyModel, patch: np.ndarray, availability: MarkerSet) -> SegOutput:
    return model.forward(patch[None], availability, ForwardMode.DET_INFER, None)


def _foreground(logits: np.ndarray) -> np.ndarray:
    return softmax_array(logits, axis=1)[:, 1]


def _aleatoric_sd(log_variance: np.ndarray) -> np.ndarray:
    return np.exp(0.5 * np.clip(log_variance[:, 0], *LOG_VARIANCE_RANGE))


def _mc_passes(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    T: int,
    streams_for: Callable[[int], np.random.Generator],
    config: InferenceConfig,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Run T MC passes; returns foreground probabilities (T,H,W) and u_a (T,H,W) or None."""
    if not model.stochastic(ForwardMode.MC_INFER):
        # p = 0: every pass equals the deterministic one
        out = _single_pass(model, patch, availability)
        fg = np.repeat(_foreground(out.logits.data), T, axis=0)
        if out.log_variance is None:
            return fg, None
        return fg, np.repeat(_aleatoric_sd(out.log_variance.data), T, axis=0)
    chunks = [range(start, min(start + config.chunk_size, T)) for start in range(0, T, config.chunk_size)]

    def run_chunk(indices: range) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        batch = np.repeat(patch[None], len(indices), axis=0)
        out = model.forward(batch, availability, ForwardMode.MC_INFER, [streams_for(t) for t in indices])
        ua = _aleatoric_sd(out.log_variance.data) if out.log_variance is not None else None
        return _foreground(out.logits.data), ua

    if config.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]

    fg = np.concatenate([r[0] for r in results])
    ua = np.concatenate([r[1] for r in results]) if results[0][1] is not None else None
    return fg, ua


def _mean_and_sd(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel mean and population SD; pixels with identical samples get SD exactly 0."""
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0)
    constant = np.ptp(samples, axis=0) == 0.0
    mean = np.where(constant, samples[0], mean)
    sd = np.where(constant, 0.0, sd)
    return mean, sd


def _check_samples(T: int) -> None:
    if T < 1:
        raise ConfigError("Number of MC samples must be >= 1", T=T)


def mc_epistemic(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    T: int = DEFAULT_SAMPLES,
    rng: RandomArg = None,
    patch_id: int = 0,
    config: Optional[InferenceConfig] = None,
) -> UncertaintyBundle:
    """Mean and SD of the foreground probability over T MC-dropout passes."""
    _check_samples(T)
    if not model.variant.mc_dropout:
        raise ConfigError("Epistemic inference needs an MC-dropout variant", variant=model.variant.label)
    config = config or InferenceConfig()
    streams_for = _as_streams(rng if rng is not None else MCStreams(0, patch_id), patch_id)
    fg, _ = _mc_passes(model, np.asarray(patch, dtype=np.float64), availability, T, streams_for, config)
    mean_prob, u_e = _mean_and_sd(fg)
    return UncertaintyBundle(patch_id, availability, mean_prob, u_e, None, T, model.variant.label).at_storage_precision()


def aleatoric_infer(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    patch_id: int = 0,
) -> UncertaintyBundle:
    """One deterministic pass; u_a = exp(log_variance / 2)."""
    if not model.variant.has_variance_head:
        raise ConfigError("Aleatoric inference needs a log-variance head", variant=model.variant.label)
    out = _single_pass(model, np.asarray(patch, dtype=np.float64), availability)
    mean_prob = _foreground(out.logits.data)[0]
    u_a = _aleatoric_sd(out.log_variance.data)[0]
    return UncertaintyBundle(
        patch_id, availability, mean_prob, np.zeros_like(mean_prob), u_a, 1, model.variant.label
    ).at_storage_precision()


def combined_predict(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    T: int = DEFAULT_SAMPLES,
    rng: RandomArg = None,
    patch_id: int = 0,
    config: Optional[InferenceConfig] = None,
) -> UncertaintyBundle:
    """T MC passes of the combined model; u_a is the per-pixel mean over passes."""
    _check_samples(T)
    if not (model.variant.mc_dropout and model.variant.has_variance_head):
        raise ConfigError("Combined inference needs dropout and a log-variance head", variant=model.variant.label)
    config = config or InferenceConfig()
    streams_for = _as_streams(rng if rng is not None else MCStreams(0, patch_id), patch_id)
    fg, ua = _mc_passes(model, np.asarray(patch, dtype=np.float64), availability, T, streams_for, config)
    mean_prob, u_e = _mean_and_sd(fg)
    u_a = ua[0] if np.all(np.ptp(ua, axis=0) == 0.0) else ua.mean(axis=0)
    return UncertaintyBundle(patch_id, availability, mean_prob, u_e, u_a, T, model.variant.label).at_storage_precision()


def deterministic_predict(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    patch_id: int = 0,
) -> UncertaintyBundle:
    """Softmax foreground map with zero uncertainty maps (plain and conventional variants)."""
    out = _single_pass(model, np.asarray(patch, dtype=np.float64), availability)
    mean_prob = _foreground(out.logits.data)[0]
    u_a = _aleatoric_sd(out.log_variance.data)[0] if out.log_variance is not None else None
    return UncertaintyBundle(
        patch_id, availability, mean_prob, np.zeros_like(mean_prob), u_a, 1, model.variant.label
    ).at_storage_precision()


def predict_bundle(
    model: UncertaintyModel,
    patch: np.ndarray,
    availability: MarkerSet,
    T: int = DEFAULT_SAMPLES,
    rng: RandomArg = None,
    patch_id: int = 0,
    config: Optional[InferenceConfig] = None,
) -> UncertaintyBundle:
    """Pick the inference routine that matches the model variant."""
    variant = model.variant
    if variant.mc_dropout and variant.has_variance_head:
        return combined_predict(model, patch, availability, T, rng, patch_id, config)
    if variant.mc_dropout:
        return mc_epistemic(model, patch, availability, T, rng, patch_id, config)
    if variant.has_variance_head:
        return aleatoric_infer(model, patch, availability, patch_id)
    return deterministic_predict(model, patch, availability, patch_id)


def predict_many(
    model: UncertaintyModel,
    items: Sequence[Tuple[int, np.ndarray, MarkerSet]],
    seed: int,
    T: int = DEFAULT_SAMPLES,
    config: Optional[InferenceConfig] = None,
) -> List[UncertaintyBundle]:
    """predict_bundle over (patch_id, masked channels, availability) items."""
    config = config or InferenceConfig()
    bundles = []
    for patch_id, channels, availability in items:
        bundles.append(predict_bundle(model, channels, availability, T, MCStreams(seed, patch_id, availability.mask), patch_id, config))
    logger.debug("Bundles predicted", count=len(bundles), variant=model.variant.label, T=T)
    return bundles

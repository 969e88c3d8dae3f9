"""
Segmentation training loop with Marker Sampling.
"""

from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field

from common.errors import ConfigError
from common.rng import stream
from nn_core.checkpoint import to_float32_precision
from nn_core.layers import ForwardMode
from nn_core.losses import aleatoric_loss, cross_entropy
from nn_core.optim import AdamState, adam_step

from .markers import MarkerSet, mask_channels, sample_marker_subset
from .model import MSMEUNet


logger = structlog.get_logger()


class TrainablePatch(Protocol):
    patch_id: int
    channels: np.ndarray
    mask: np.ndarray
    availability: MarkerSet


class TrainConfig(BaseModel):
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    loss_samples: int = Field(default=50, ge=1)  # T for the aleatoric loss
    class_weight: Optional[Tuple[float, float]] = None
    marker_sampling: bool = True


class TrainingHistory(BaseModel):
    variant: str
    seed: int
    steps: int = 0
    epoch_losses: List[float] = Field(default_factory=list)


def one_hot_mask(mask: np.ndarray) -> np.ndarray:
    """H x W binary mask -> 2 x H x W one-hot (background, foreground)."""
    fg = (np.asarray(mask) > 0.5).astype(np.float64)
    return np.stack([1.0 - fg, fg])


def train_segmentation(
    model: MSMEUNet,
    patches: Sequence[TrainablePatch],
    config: TrainConfig,
    seed: int,
) -> TrainingHistory:
    """
    Train in place with Adam.

    Every patch in every step sees a fresh uniform subset of its own
    available markers (when marker_sampling is on); unsampled channels are
    zero-filled before the forward pass. Parameters are rounded to
    checkpoint precision at the end so the in-memory model equals a
    reloaded one.
    """
    if not patches:
        raise ConfigError("No training patches")
    params = model.parameters()
    state = AdamState.for_parameters(params, config.learning_rate)
    history = TrainingHistory(variant=model.variant.label, seed=seed)

    logger.info(
        "Training segmentation model",
        variant=model.variant.label,
        patches=len(patches),
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=seed,
    )
    for epoch in range(config.epochs):
        order = stream(seed, "shuffle", epoch).permutation(len(patches))
        losses: List[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [patches[i] for i in order[start : start + config.batch_size]]
            loss = _batch_loss(model, batch, config, seed, epoch, history.steps)
            model.zero_grad()
            loss.backward()
            adam_step(state, params)
            history.steps += 1
            losses.append(loss.item())
        mean_loss = float(np.mean(losses))
        history.epoch_losses.append(mean_loss)
        logger.info("Epoch finished", variant=model.variant.label, epoch=epoch + 1, loss=round(mean_loss, 6))

    for p in params:
        p.data = to_float32_precision(p.data)
        p.grad = None
    return history


def _batch_loss(model: MSMEUNet, batch: Sequence[TrainablePatch], config: TrainConfig, seed: int, epoch: int, step: int):
    inputs = []
    availability = []
    labels = []
    for patch in batch:
        avail = patch.availability
        if config.marker_sampling:
            avail = sample_marker_subset(avail, stream(seed, "marker-sampling", epoch, patch.patch_id))
        inputs.append(mask_channels(patch.channels, avail))
        availability.append(avail.vector())
        labels.append(one_hot_mask(patch.mask))

    rngs = [stream(seed, "dropout", epoch, patch.patch_id) for patch in batch]
    out = model.forward(np.stack(inputs), np.stack(availability), ForwardMode.TRAIN, rngs)
    y = np.stack(labels)
    if model.variant.has_variance_head:
        return aleatoric_loss(
            out.logits,
            out.log_variance,
            y,
            config.loss_samples,
            stream(seed, "aleatoric-noise", step),
            config.class_weight,
        )
    return cross_entropy(out.logits.softmax(axis=1), y, config.class_weight)

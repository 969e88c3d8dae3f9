"""
Synthetic fluorescence-microscopy generator.

Foreground is a set of smooth sinusoid vessels rasterized as ribbons.
Confounders are random-walk tubes that are not part of the mask. Each
marker renders both structure types with its own visibility weights,
then gets blurred, scaled by the sample's acquisition gain, offset by a
background level and corrupted with additive Gaussian noise.

Every patch draws from streams keyed by its patch id, so generation is a
pure function of the DatasetSpec and can run on several threads.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple

import numpy as np
import structlog
from scipy.ndimage import distance_transform_edt, gaussian_filter

from common.errors import DatasetGenerationError
from common.rng import stream
from msme_segnet.markers import MarkerSet
from nn_core.checkpoint import to_float32_precision

from .config import DatasetSpec
from .patch import MarkerPatch


logger = structlog.get_logger()

MAX_TUBES = 200
OVERSHOOT = 1.35   # accepted fraction may exceed the patch target by this factor
UNDERSHOOT = 0.75  # growth stops once this share of the target is covered

Centerline = Callable[[np.random.Generator, int], np.ndarray]


def sinusoid_centerline(rng: np.random.Generator, extent: int) -> np.ndarray:
    """Points of a sinusoidal curve crossing the patch at a random angle."""
    theta = rng.uniform(0.0, np.pi)
    center = rng.uniform(0.2, 0.8, size=2) * extent
    amplitude = rng.uniform(2.0, 8.0)
    period = rng.uniform(24.0, 64.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(-extent, extent, 0.5)
    offset = amplitude * np.sin(2.0 * np.pi * t / period + phase)
    direction = np.array([np.cos(theta), np.sin(theta)])
    normal = np.array([-np.sin(theta), np.cos(theta)])
    return center + t[:, None] * direction + offset[:, None] * normal


def random_walk_centerline(rng: np.random.Generator, extent: int) -> np.ndarray:
    """Points of a wandering unit-step walk; the non-sinusoid confounders."""
    start = rng.uniform(0.0, extent, size=2)
    steps = int(rng.integers(30, 90))
    heading = rng.uniform(0.0, 2.0 * np.pi) + np.cumsum(rng.normal(0.0, 0.3, size=steps))
    moves = np.stack([np.cos(heading), np.sin(heading)], axis=1)
    # half-steps keep the rasterized line connected
    return start + np.cumsum(np.repeat(moves * 0.5, 2, axis=0), axis=0)


def rasterize_ribbon(points: np.ndarray, radius: float, extent: int) -> np.ndarray:
    """Boolean mask of pixels within ``radius`` of the rasterized centerline."""
    idx = np.rint(points).astype(np.int64)
    inside = (idx >= 0).all(axis=1) & (idx < extent).all(axis=1)
    line = np.zeros((extent, extent), dtype=bool)
    line[idx[inside, 0], idx[inside, 1]] = True
    if not line.any():
        return line
    return distance_transform_edt(~line) <= radius


def grow_structures(
    rng: np.random.Generator,
    extent: int,
    target: float,
    centerline: Centerline,
    radius_range: Tuple[float, float],
    max_retries: int,
    patch_id: int,
) -> np.ndarray:
    """Add ribbons until the covered fraction reaches the target band."""
    mask = np.zeros((extent, extent), dtype=bool)
    if target <= 0.0:
        return mask
    upper = target * OVERSHOOT
    retries = 0
    tubes = 0
    while mask.mean() < target * UNDERSHOOT:
        ribbon = rasterize_ribbon(centerline(rng, extent), rng.uniform(*radius_range), extent)
        grown = mask | ribbon
        if grown.sum() == mask.sum() or grown.mean() > upper:
            retries += 1
            if retries > max_retries:
                raise DatasetGenerationError(
                    "Could not reach the foreground fraction",
                    patch_id=patch_id,
                    target=round(target, 4),
                    reached=round(float(mask.mean()), 4),
                    retries=max_retries,
                )
            continue
        mask = grown
        tubes += 1
        if tubes >= MAX_TUBES:
            raise DatasetGenerationError("Too many structures for one patch", patch_id=patch_id, target=target)
    return mask


def render_channels(
    vessel: np.ndarray,
    confounder: np.ndarray,
    spec: DatasetSpec,
    gain: float,
    noise_rng: np.random.Generator,
) -> np.ndarray:
    """K x H x W intensities in [0, 1]."""
    structures = np.stack([vessel, confounder]).astype(np.float64)
    signal = np.einsum("ks,shw->khw", np.asarray(spec.visibility, dtype=np.float64), structures)
    if spec.blur_sigma > 0:
        signal = gaussian_filter(signal, sigma=(0.0, spec.blur_sigma, spec.blur_sigma))
    noise = noise_rng.standard_normal(signal.shape) * np.asarray(spec.noise)[:, None, None]
    return to_float32_precision(np.clip(spec.background + gain * signal + noise, 0.0, 1.0))


def sample_gain(spec: DatasetSpec, sample_id: int) -> float:
    return float(stream(spec.seed, "gain", sample_id).uniform(1.0 - spec.gain_spread, 1.0 + spec.gain_spread))


def patch_layout(spec: DatasetSpec) -> List[Tuple[int, int, int]]:
    """(patch_id, sample_id, index within sample) in canonical order."""
    layout = []
    patch_id = 0
    for sample_id, count in enumerate(spec.patches_per_sample, start=1):
        for index in range(count):
            layout.append((patch_id, sample_id, index))
            patch_id += 1
    return layout


def generate_patch(spec: DatasetSpec, patch_id: int, sample_id: int, index: int) -> MarkerPatch:
    rng = stream(spec.seed, "patch", patch_id)
    extent = spec.patch_extent
    radius = (spec.radius_range[0], spec.radius_range[1])
    target = spec.foreground_target * rng.uniform(0.85, 1.15)
    vessel = grow_structures(rng, extent, target, sinusoid_centerline, radius, spec.max_retries, patch_id)
    confounder = grow_structures(
        rng, extent, spec.confounder_target, random_walk_centerline, (1.0, 2.0), spec.max_retries, patch_id
    )
    channels = render_channels(vessel, confounder, spec, sample_gain(spec, sample_id), stream(spec.seed, "noise", patch_id))
    return MarkerPatch(
        patch_id=patch_id,
        sample_id=sample_id,
        index=index,
        channels=channels,
        mask=vessel.astype(np.uint8),
        split=spec.split.tag_of(sample_id),
        availability=MarkerSet.full(spec.n_markers),
    )


def generate_dataset(spec: DatasetSpec, workers: int = 1) -> List[MarkerPatch]:
    """All patches of the dataset, every marker available, split tags from spec.split."""
    layout = patch_layout(spec)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patches = list(pool.map(lambda item: generate_patch(spec, *item), layout))
    else:
        patches = [generate_patch(spec, *item) for item in layout]

    fractions = [p.foreground_fraction for p in patches]
    logger.info(
        "Synthetic dataset generated",
        patches=len(patches),
        samples=spec.n_samples,
        mean_foreground=round(float(np.mean(fractions)), 4),
        seed=spec.seed,
    )
    return patches

"""
Counter-based random streams.

Every stochastic step draws from a generator keyed by
(master seed, purpose, coordinates...), e.g. ``stream(7, "mc", patch_id, t)``.
The same key always yields the same numbers, so results do not depend on
thread count, chunk size or scheduling order.
"""

import zlib
from typing import Iterable, List

import numpy as np


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def seed_sequence(seed: int, purpose: str, *coords: int) -> np.random.SeedSequence:
    """Build the SeedSequence for a stream key."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [int(seed), _purpose_code(purpose), *(int(c) for c in coords)]
    if any(c < 0 for c in entropy):
        raise ValueError(f"stream coordinates must be non-negative: {entropy}")
    return np.random.SeedSequence(entropy)


def stream(seed: int, purpose: str, *coords: int) -> np.random.Generator:
    """Return a fresh Philox generator for the given key."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, purpose, *coords)))


def streams(seed: int, purpose: str, prefix: Iterable[int], indices: Iterable[int]) -> List[np.random.Generator]:
    """One generator per index, all sharing the same key prefix."""
    head = tuple(prefix)
    return [stream(seed, purpose, *head, i) for i in indices]


def derive_seed(seed: int, purpose: str, *coords: int) -> int:
    """Derive a child integer seed, for components that take a plain int."""
    state = seed_sequence(seed, purpose, *coords).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])

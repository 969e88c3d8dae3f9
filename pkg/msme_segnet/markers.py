"""
Marker combinations.

A combination m_G is stored as a bitmask with bit (k-1) set for marker k,
so m_135 encodes as 1 + 4 + 16 = 21. The canonical order of combinations
is ascending mask, which makes the one-hot index of m_G equal mask - 1.
"""

from dataclasses import dataclass
from typing import Iterable, Iterator, List, Tuple, Union

import numpy as np

from common.errors import MarkerSetError

DEFAULT_MARKERS = 5


@dataclass(frozen=True, order=True)
class MarkerSet:
    """Nonempty subset of the K markers {1..K}."""

    mask: int
    n_markers: int = DEFAULT_MARKERS

    def __post_init__(self) -> None:
        if self.n_markers < 1:
            raise MarkerSetError("n_markers must be >= 1", n_markers=self.n_markers)
        if self.mask <= 0:
            raise MarkerSetError("marker combination must be nonempty", mask=self.mask)
        if self.mask >= 1 << self.n_markers:
            raise MarkerSetError("marker index out of range", mask=self.mask, n_markers=self.n_markers)

    @classmethod
    def from_members(cls, members: Iterable[int], n_markers: int = DEFAULT_MARKERS) -> "MarkerSet":
        mask = 0
        for k in members:
            if not 1 <= int(k) <= n_markers:
                raise MarkerSetError("marker index out of range", marker=k, n_markers=n_markers)
            mask |= 1 << (int(k) - 1)
        return cls(mask, n_markers)

    @classmethod
    def full(cls, n_markers: int = DEFAULT_MARKERS) -> "MarkerSet":
        return cls((1 << n_markers) - 1, n_markers)

    @classmethod
    def parse(cls, text: Union[str, int, Iterable[int]], n_markers: int = DEFAULT_MARKERS) -> "MarkerSet":
        """Accept "m_135", "m135", "135", "1,3,5" or a member list."""
        if isinstance(text, MarkerSet):
            return text
        if isinstance(text, int):
            return cls.from_members((int(d) for d in str(text)), n_markers)
        if not isinstance(text, str):
            return cls.from_members(text, n_markers)
        body = text.strip().lower().removeprefix("m").lstrip("_")
        if "," in body:
            members = [int(part) for part in body.split(",") if part.strip()]
        else:
            members = [int(ch) for ch in body]
        return cls.from_members(members, n_markers)

    @property
    def members(self) -> Tuple[int, ...]:
        return tuple(k + 1 for k in range(self.n_markers) if self.mask >> k & 1)

    @property
    def digits(self) -> str:
        return "".join(str(k) for k in self.members)

    @property
    def name(self) -> str:
        return f"m_{self.digits}"

    @property
    def index(self) -> int:
        """Position in enumerate_combinations order."""
        return self.mask - 1

    def vector(self) -> np.ndarray:
        """K-length binary availability vector (float64)."""
        return np.array([(self.mask >> k) & 1 for k in range(self.n_markers)], dtype=np.float64)

    def issubset(self, other: "MarkerSet") -> bool:
        return self.mask & ~other.mask == 0

    def __contains__(self, marker: object) -> bool:
        return isinstance(marker, int) and 1 <= marker <= self.n_markers and bool(self.mask >> (marker - 1) & 1)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __str__(self) -> str:
        return self.name


def enumerate_combinations(n_markers: int = DEFAULT_MARKERS) -> List[MarkerSet]:
    """All 2^K - 1 nonempty subsets in ascending canonical-integer order."""
    if n_markers < 1:
        raise MarkerSetError("need at least one marker", n_markers=n_markers)
    return [MarkerSet(mask, n_markers) for mask in range(1, 1 << n_markers)]


def sample_marker_subset(available: MarkerSet, rng: np.random.Generator) -> MarkerSet:
    """
    Marker Sampling: uniform draw over the nonempty subsets of ``available``.
    """
    if not isinstance(available, MarkerSet) or len(available) == 0:
        raise MarkerSetError("cannot sample from an empty marker set")
    members = available.members
    pick = int(rng.integers(1, 1 << len(members)))
    chosen = [m for i, m in enumerate(members) if pick >> i & 1]
    return MarkerSet.from_members(chosen, available.n_markers)


def mask_channels(channels: np.ndarray, availability: MarkerSet) -> np.ndarray:
    """Zero-fill (exactly 0.0) every channel plane outside the availability set."""
    if channels.shape[0] != availability.n_markers:
        raise MarkerSetError("channel count differs from marker count", channels=channels.shape[0], n_markers=availability.n_markers)
    keep = availability.vector().astype(bool)
    out = channels.copy()
    out[~keep] = 0.0
    return out

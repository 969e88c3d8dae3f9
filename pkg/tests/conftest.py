"""
Pytest configuration and fixtures for the msme-quality tests.
"""

import os
import sys
from typing import List

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from common.artifact_store import ArtifactStore
from msme_segnet.markers import MarkerSet
from msme_segnet.model import ArchConfig, SegVariant, build_model
from synth_fm.config import DatasetSpec
from synth_fm.generator import generate_dataset
from synth_fm.patch import MarkerPatch
from uncertainty.bundle import UncertaintyBundle


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed generator for test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def store(tmp_path) -> ArtifactStore:
    """Artifact store rooted in a temporary run directory."""
    return ArtifactStore(tmp_path / "run")


@pytest.fixture
def small_spec() -> DatasetSpec:
    """Eight one-patch samples of extent 32 with the default split."""
    return DatasetSpec(patches_per_sample=[1] * 8, patch_extent=32, seed=3)


@pytest.fixture(scope="session")
def small_dataset() -> List[MarkerPatch]:
    """Generated once per session; tests must not mutate it."""
    spec = DatasetSpec(patches_per_sample=[1] * 8, patch_extent=32, seed=3)
    return generate_dataset(spec)


@pytest.fixture
def small_arch() -> ArchConfig:
    return ArchConfig(depth=2, base_width=4, patch_extent=32)


@pytest.fixture
def combined_model(small_arch):
    """Untrained combined-variant model with p=0.2."""
    return build_model(small_arch, SegVariant.parse("combined(p=0.2)"), seed=5)


@pytest.fixture
def plain_model(small_arch):
    return build_model(small_arch, SegVariant.parse("plain"), seed=5)


@pytest.fixture
def sample_bundle() -> UncertaintyBundle:
    """Hand-built 8x8 bundle for m_135."""
    grid = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    return UncertaintyBundle(
        patch_id=12,
        availability=MarkerSet.parse("m_135"),
        mean_prob=grid,
        u_e=0.1 * grid,
        u_a=0.2 * (1.0 - grid),
        T_used=10,
        variant="combined(p=0.2)",
    )

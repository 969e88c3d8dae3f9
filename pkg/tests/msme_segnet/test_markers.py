"""
Tests for marker combinations and Marker Sampling.
"""

import numpy as np
import pytest

from common.errors import MarkerSetError
from msme_segnet.markers import MarkerSet, enumerate_combinations, mask_channels, sample_marker_subset


class TestMarkerSet:
    """Tests for MarkerSet."""

    def test_canonical_mask(self):
        """Bit k-1 stands for marker k."""
        m = MarkerSet.parse("m_135")
        assert m.mask == 21
        assert m.members == (1, 3, 5)
        assert m.name == "m_135"
        assert len(m) == 3

    @pytest.mark.parametrize("text", ["m_135", "m135", "135", "1,3,5", 135, [5, 3, 1]])
    def test_parse_forms(self, text):
        assert MarkerSet.parse(text) == MarkerSet(21)

    def test_full_set_index(self):
        """m_12345 is the last of the 31 combinations."""
        assert MarkerSet.full().index == 30
        assert MarkerSet.parse("1").index == 0

    def test_vector(self):
        np.testing.assert_array_equal(MarkerSet.parse("24").vector(), [0.0, 1.0, 0.0, 1.0, 0.0])

    def test_empty_rejected(self):
        with pytest.raises(MarkerSetError):
            MarkerSet(0)

    def test_out_of_range_rejected(self):
        with pytest.raises(MarkerSetError):
            MarkerSet.parse("16")
        with pytest.raises(MarkerSetError):
            MarkerSet(32, 5)

    def test_subset(self):
        assert MarkerSet.parse("13").issubset(MarkerSet.parse("135"))
        assert not MarkerSet.parse("12").issubset(MarkerSet.parse("135"))
        assert 3 in MarkerSet.parse("135")
        assert 2 not in MarkerSet.parse("135")


class TestEnumerate:
    def test_all_combinations_in_mask_order(self):
        combos = enumerate_combinations(5)
        assert len(combos) == 31
        assert [c.mask for c in combos] == list(range(1, 32))
        assert [c.index for c in combos] == list(range(31))

    def test_needs_a_marker(self):
        with pytest.raises(MarkerSetError):
            enumerate_combinations(0)


class TestMarkerSampling:
    """Tests for sample_marker_subset and zero-filling."""

    def test_draws_are_nonempty_subsets(self):
        available = MarkerSet.parse("135")
        rng = np.random.default_rng(0)
        draws = [sample_marker_subset(available, rng) for _ in range(200)]
        assert all(d.issubset(available) and len(d) >= 1 for d in draws)

    def test_every_subset_reachable(self):
        """All 2^3 - 1 subsets of a three-marker set show up."""
        rng = np.random.default_rng(1)
        seen = {sample_marker_subset(MarkerSet.parse("135"), rng).mask for _ in range(500)}
        assert len(seen) == 7

    def test_subsets_drawn_uniformly(self):
        available = MarkerSet.parse("12")
        rng = np.random.default_rng(9)
        draws = [sample_marker_subset(available, rng).mask for _ in range(30_000)]
        counts = np.bincount(draws, minlength=4)[1:]
        np.testing.assert_allclose(counts / len(draws), [1 / 3] * 3, atol=0.02)

    def test_single_marker(self):
        only = MarkerSet.parse("4")
        assert sample_marker_subset(only, np.random.default_rng(2)) == only

    def test_mask_channels_zero_fills(self, rng):
        channels = rng.uniform(0.1, 1.0, size=(5, 4, 4))
        out = mask_channels(channels, MarkerSet.parse("25"))
        assert np.all(out[[0, 2, 3]] == 0.0)
        np.testing.assert_array_equal(out[[1, 4]], channels[[1, 4]])
        assert np.all(channels > 0.0)

    def test_mask_channels_count(self):
        with pytest.raises(MarkerSetError):
            mask_channels(np.zeros((3, 2, 2)), MarkerSet.full(5))

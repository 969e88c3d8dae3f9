"""
Tests for training scenarios and fold splits.
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from common.errors import ConfigError, MarkerSetError, UnknownSampleError
from msme_segnet.markers import MarkerSet
from synth_fm.config import SampleSplit, SplitTag
from synth_fm.patch import mask_patch
from synth_fm.scenarios import (
    BUILTIN_SCENARIOS,
    Scenario,
    apply_scenario,
    assign_split,
    fold_split,
    load_scenario,
    split_patches,
)


class TestScenario:
    """Tests for Scenario binding and loading."""

    def test_case6_slots(self):
        bound = BUILTIN_SCENARIOS["case6"].bind([5, 1, 2, 3, 4])
        assert {sid: m.name for sid, m in bound.items()} == {
            1: "m_135",
            2: "m_124",
            3: "m_35",
            4: "m_23",
            5: "m_45",
        }

    def test_full_keeps_every_marker(self):
        assert set(BUILTIN_SCENARIOS["full"].bind([1, 2]).values()) == {MarkerSet.full()}

    def test_slot_count(self):
        with pytest.raises(ConfigError):
            BUILTIN_SCENARIOS["case6"].bind([1, 2, 3])

    def test_samples_or_slots(self):
        with pytest.raises(ValidationError):
            Scenario(name="x", samples={1: "1"}, slots=["1"])

    def test_invalid_combination(self):
        with pytest.raises(ValidationError):
            Scenario(name="x", slots=["16"])

    def test_samples_must_cover_train(self):
        with pytest.raises(ConfigError):
            Scenario(name="x", samples={1: "12"}).bind([1, 2])

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"name": "custom", "samples": {"1": "1", "2": "2"}}))
        scenario = load_scenario(str(path))
        assert scenario.bind([1, 2])[2] == MarkerSet.parse("2")

    def test_load_unknown(self):
        with pytest.raises(ConfigError):
            load_scenario("no-such-scenario")

    def test_load_invalid_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"name": "bad", "slots": ["1"], "samples": {"1": "1"}}))
        with pytest.raises(ConfigError):
            load_scenario(str(path))


class TestApplyScenario:
    """Tests for apply_scenario."""

    def test_only_training_patches_ablated(self, small_dataset):
        ablated = apply_scenario(small_dataset, BUILTIN_SCENARIOS["case6"])
        by_sample = {p.sample_id: p for p in ablated}
        assert by_sample[1].availability.name == "m_135"
        assert np.all(by_sample[1].channels[[1, 3]] == 0.0)
        for sid in (6, 7, 8):
            assert by_sample[sid].availability == MarkerSet.full()
            original = next(p for p in small_dataset if p.sample_id == sid)
            np.testing.assert_array_equal(by_sample[sid].channels, original.channels)

    def test_unknown_sample(self, small_dataset):
        with pytest.raises(UnknownSampleError):
            apply_scenario(small_dataset, Scenario(name="x", samples={9: "1"}))

    def test_cannot_ablate_test_samples(self, small_dataset):
        samples = {sid: "1" for sid in (1, 2, 3, 4, 5, 7)}
        with pytest.raises(ConfigError):
            apply_scenario(small_dataset, Scenario(name="x", samples=samples))


class TestFoldSplit:
    """Tests for rotated-validation splits."""

    def test_folds_rotate_validation(self):
        splits = [fold_split(8, f, seed=0) for f in range(4)]
        vals = [s.val[0] for s in splits]
        assert len(set(vals)) == 4
        for s in splits:
            assert s.test == [7, 8]
            assert sorted(s.train + s.val) == [1, 2, 3, 4, 5, 6]

    def test_same_seed_same_split(self):
        assert fold_split(8, 2, seed=5) == fold_split(8, 2, seed=5)

    def test_fold_out_of_range(self):
        with pytest.raises(ConfigError):
            fold_split(8, 4, n_folds=4)

    def test_too_many_folds(self):
        with pytest.raises(ConfigError):
            fold_split(8, 0, n_folds=7)

    def test_assign_split(self, small_dataset):
        split = SampleSplit(train=[2, 3, 4, 5, 6], val=[1], test=[7, 8])
        patches = assign_split(small_dataset, split)
        assert [p.sample_id for p in split_patches(patches, SplitTag.VAL)] == [1]
        assert len(split_patches(patches, SplitTag.TRAIN)) == 5
        assert len(split_patches(patches, SplitTag.TEST, samples=[8])) == 1

    def test_assign_rejects_ablated_validation(self, small_dataset):
        patches = [mask_patch(small_dataset[0], MarkerSet.parse("1"))] + list(small_dataset[1:])
        split = SampleSplit(train=[2, 3, 4, 5, 6], val=[1], test=[7, 8])
        with pytest.raises(MarkerSetError):
            assign_split(patches, split)

    def test_assign_unknown_sample(self, small_dataset):
        with pytest.raises(UnknownSampleError):
            assign_split(small_dataset, SampleSplit(train=[1, 2], val=[3], test=[4]))

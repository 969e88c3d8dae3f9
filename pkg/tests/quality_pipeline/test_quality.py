"""
Tests for quality examples, regressors, evaluation and their file formats.
"""

from typing import List

import numpy as np
import pandas as pd
import pytest

from common.errors import ConfigError, MarkerSetError, MissingArtifactError, ShapeError
from msme_segnet.markers import MarkerSet
from nn_core.checkpoint import encode_blob
from quality_features.features import FeatureMode
from quality_pipeline.dataset import QualityExample, build_quality_dataset, feature_matrix, targets
from quality_pipeline.evaluate import (
    PREDICTION_COLUMNS,
    evaluate_quality,
    predictions_frame,
    summarize_predictions,
)
from quality_pipeline.io import (
    feature_table,
    features_key,
    load_regressor,
    read_predictions,
    read_quality_set,
    save_regressor,
    write_predictions,
    write_quality_set,
)
from quality_pipeline.qnet import QNet, QNetSpec, fit_extent, load_qnet, qnet_from_bytes, qnet_to_bytes
from quality_pipeline.regressors import CNNRegressor, ForestRegressor, train_regressor
from random_forest.forest import ForestParams
from synth_fm.config import SplitTag
from synth_fm.patch import mask_patch
from uncertainty.bundle import UncertaintyBundle, bundle_to_bytes

COMBOS = [MarkerSet.parse("1"), MarkerSet.parse("13"), MarkerSet.full()]
TINY_QNET = QNetSpec(widths=[2, 2], hidden=4, pool=2, input_extent=8, epochs=2)


def _examples(n: int = 12, fold: int = 0, with_ua: bool = True, combos: List[MarkerSet] = COMBOS) -> List[QualityExample]:
    """Synthetic examples whose u_e level falls as the target rises."""
    rng = np.random.default_rng(fold)
    out = []
    for i in range(n):
        q = (i + 0.5) / n
        noise = rng.random((8, 8))
        bundle = UncertaintyBundle(
            patch_id=i,
            availability=combos[i % len(combos)],
            mean_prob=noise,
            u_e=(1.0 - q) * 0.2 * noise,
            u_a=0.1 * noise if with_ua else None,
            T_used=4,
            variant="combined(p=0.2)",
        )
        out.append(QualityExample(i, 1 + i % 5, fold, q, bundle))
    return out


class TestQualityExample:
    """Tests for QualityExample and feature matrices."""

    def test_target_range(self, sample_bundle):
        with pytest.raises(ValueError):
            QualityExample(12, 1, 0, 1.5, sample_bundle)

    def test_negative_fold(self, sample_bundle):
        with pytest.raises(ValueError):
            QualityExample(12, 1, -1, 0.5, sample_bundle)

    def test_map_stack(self, sample_bundle):
        example = QualityExample(12, 1, 0, 0.5, sample_bundle)
        stack = example.map_stack()
        assert stack.shape == (2, 8, 8)
        np.testing.assert_array_equal(stack[1], sample_bundle.u_a)

    def test_feature_matrix(self):
        examples = _examples(6)
        assert feature_matrix(examples, FeatureMode.BOTH).shape == (6, 263)
        assert feature_matrix(examples, FeatureMode.E_ONLY).shape == (6, 147)
        np.testing.assert_array_equal(targets(examples), [e.target for e in examples])

    def test_feature_matrix_empty(self):
        with pytest.raises(ConfigError):
            feature_matrix([], FeatureMode.BOTH)


class TestBuildQualityDataset:
    """Tests for build_quality_dataset on an untrained combined model."""

    def test_patch_major_order(self, combined_model, small_dataset):
        combos = [MarkerSet.parse("1"), MarkerSet.full()]
        examples = build_quality_dataset(combined_model, small_dataset, SplitTag.TEST, T=2, seed=4, fold=1, combinations=combos)
        test_ids = [p.patch_id for p in small_dataset if p.split == SplitTag.TEST]
        assert [e.patch_id for e in examples] == [test_ids[0], test_ids[0], test_ids[1], test_ids[1]]
        assert [e.availability for e in examples] == combos * 2
        for e in examples:
            assert 0.0 <= e.target <= 1.0
            assert e.fold == 1
            assert e.bundle.has_aleatoric
            assert e.bundle.T_used == 2

    def test_masked_channels_follow_combination(self, combined_model, small_dataset):
        """Different combinations of the same patch give different predictions."""
        combos = [MarkerSet.parse("1"), MarkerSet.full()]
        a, b = build_quality_dataset(combined_model, small_dataset, SplitTag.VAL, T=2, seed=4, combinations=combos)
        assert not np.array_equal(a.bundle.mean_prob, b.bundle.mean_prob)

    def test_workers_do_not_change_examples(self, combined_model, small_dataset):
        kwargs = dict(T=2, seed=4, combinations=[MarkerSet.parse("2"), MarkerSet.parse("45")])
        serial = build_quality_dataset(combined_model, small_dataset, SplitTag.TEST, **kwargs)
        threaded = build_quality_dataset(combined_model, small_dataset, SplitTag.TEST, workers=3, **kwargs)
        assert [e.target for e in serial] == [e.target for e in threaded]
        assert [bundle_to_bytes(e.bundle) for e in serial] == [bundle_to_bytes(e.bundle) for e in threaded]

    def test_empty_split(self, combined_model, small_dataset):
        train_only = [p for p in small_dataset if p.split == SplitTag.TRAIN]
        with pytest.raises(ConfigError):
            build_quality_dataset(combined_model, train_only, SplitTag.VAL, T=2, seed=0)

    def test_ablated_patch_rejected(self, combined_model, small_dataset):
        patches = [mask_patch(p, MarkerSet.parse("12")) if p.split == SplitTag.VAL else p for p in small_dataset]
        with pytest.raises(MarkerSetError):
            build_quality_dataset(combined_model, patches, SplitTag.VAL, T=2, seed=0)


class TestRegressors:
    """Tests for train_regressor."""

    @pytest.mark.parametrize("name", ["rf-e", "rf-a", "rf-both"])
    def test_forest_predictions_within_target_range(self, name):
        """Forest predictions are averages of training targets."""
        train = _examples(12)
        regressor = train_regressor(name, train, ForestParams(n_trees=8), TINY_QNET, seed=0)
        assert isinstance(regressor, ForestRegressor)
        assert regressor.name == name
        pred = regressor.predict(_examples(6, fold=1))
        assert pred.shape == (6,)
        y = targets(train)
        assert np.all((pred >= y.min()) & (pred <= y.max()))

    def test_forest_needs_two_examples(self):
        with pytest.raises(ConfigError):
            train_regressor("rf-e", _examples(1), ForestParams(n_trees=2), TINY_QNET, seed=0)

    def test_unknown_regressor(self):
        with pytest.raises(ConfigError):
            train_regressor("svm", _examples(4), ForestParams(), TINY_QNET, seed=0)

    def test_cnn(self):
        regressor = train_regressor("cnn", _examples(6), ForestParams(), TINY_QNET, seed=0)
        assert isinstance(regressor, CNNRegressor)
        pred = regressor.predict(_examples(5, fold=1))
        assert pred.shape == (5,)
        assert np.all(np.isfinite(pred))

    def test_cnn_reproducible(self):
        a = train_regressor("cnn", _examples(6), ForestParams(), TINY_QNET, seed=2)
        b = train_regressor("cnn", _examples(6), ForestParams(), TINY_QNET, seed=2)
        assert qnet_to_bytes(a.net) == qnet_to_bytes(b.net)


class TestQNet:
    """Tests for the quality CNN building blocks."""

    def test_spatial_after_pools(self):
        assert QNetSpec().spatial_after_pools() == 1  # 64 -> 22 -> 8 -> 3 -> 1
        assert TINY_QNET.spatial_after_pools() == 4

    def test_fit_extent_crops_center(self):
        planes = np.arange(16.0).reshape(1, 4, 4)
        np.testing.assert_array_equal(fit_extent(planes, 2)[0], [[5.0, 6.0], [9.0, 10.0]])

    def test_fit_extent_pads_with_zeros(self):
        planes = np.ones((2, 4, 4))
        out = fit_extent(planes, 6)
        assert out.shape == (2, 6, 6)
        assert out.sum() == 32.0
        assert np.all(out[:, 1:5, 1:5] == 1.0)

    def test_forward_shape(self):
        net = QNet(TINY_QNET, seed=0)
        assert net.forward(np.zeros((3, 2, 8, 8))).shape == (3, 1)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((3, 2, 9, 9)))

    def test_bytes_round_trip(self):
        regressor = train_regressor("cnn", _examples(4), ForestParams(), TINY_QNET, seed=1)
        again = qnet_from_bytes(qnet_to_bytes(regressor.net))
        test = _examples(3, fold=2)
        np.testing.assert_array_equal(CNNRegressor(net=again).predict(test), regressor.predict(test))

    def test_wrong_kind(self):
        with pytest.raises(ShapeError):
            qnet_from_bytes(encode_blob({"kind": "segmentation"}, {}))

    def test_load_missing(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_qnet(tmp_path / "cnn.bin")


class TestEvaluate:
    """Tests for prediction tables and their summaries."""

    @pytest.fixture
    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "patch_id": [0, 0, 1, 1],
                "combo_mask": [1, 1, 5, 5],
                "fold": [0, 1, 0, 1],
                "q_true": [0.2, 0.4, 0.6, 0.8],
                "q_pred": [0.3, 0.3, 0.7, 0.7],
                "regressor_name": "rf-both",
            },
            columns=PREDICTION_COLUMNS,
        )

    def test_summary(self, frame):
        evaluation = summarize_predictions(frame)
        assert evaluation.regressor == "rf-both"
        assert evaluation.n == 4
        assert evaluation.rmse == pytest.approx(0.1)
        assert evaluation.rmse_per_fold == {0: pytest.approx(0.1), 1: pytest.approx(0.1)}
        assert evaluation.r2_of_means == pytest.approx(1.0)

    def test_per_combination(self, frame):
        first, second = summarize_predictions(frame).per_combination
        assert (first.combination, first.combo_mask, first.folds) == ("m_1", 1, 2)
        assert second.combination == "m_13"
        assert first.pred_mean == pytest.approx(0.3)
        assert first.pred_sd == pytest.approx(0.0)
        assert first.true_mean == pytest.approx(0.3)
        assert first.true_sd == pytest.approx(np.std([0.2, 0.4], ddof=1))

    def test_single_fold_has_zero_sd(self, frame):
        summary = summarize_predictions(frame[frame["fold"] == 0])
        assert all(s.true_sd == 0.0 and s.pred_sd == 0.0 for s in summary.per_combination)

    def test_mixed_regressors(self, frame):
        frame.loc[0, "regressor_name"] = "cnn"
        with pytest.raises(ConfigError):
            summarize_predictions(frame)

    def test_empty(self, frame):
        with pytest.raises(ConfigError):
            summarize_predictions(frame.iloc[0:0])

    def test_combination_names_follow_marker_count(self, frame):
        """Masks are named against the dataset's marker count, not the five-marker default."""
        frame["combo_mask"] = [7, 7, 40, 40]
        with pytest.raises(MarkerSetError):
            summarize_predictions(frame)
        first, second = summarize_predictions(frame, n_markers=6).per_combination
        assert (first.combination, second.combination) == ("m_123", "m_46")

    def test_three_marker_evaluation(self):
        combos = [MarkerSet.parse("1", 3), MarkerSet.parse("23", 3), MarkerSet.full(3)]
        train = _examples(8, combos=combos)
        regressor = train_regressor("rf-e", train, ForestParams(n_trees=4), TINY_QNET, seed=0)
        evaluation = evaluate_quality(regressor, _examples(6, fold=1, combos=combos))
        assert [s.combination for s in evaluation.per_combination] == ["m_1", "m_23", "m_123"]

    def test_predictions_frame(self):
        train = _examples(8)
        regressor = train_regressor("rf-e", train, ForestParams(n_trees=4), TINY_QNET, seed=0)
        test = _examples(4, fold=3)
        frame = predictions_frame(regressor, test)
        assert list(frame.columns) == PREDICTION_COLUMNS
        assert list(frame["fold"]) == [3] * 4
        assert list(frame["combo_mask"]) == [c.mask for c in (COMBOS * 2)[:4]]
        np.testing.assert_array_equal(frame["q_pred"], regressor.predict(test))

    def test_per_fold_regressors(self):
        """A mapping picks each example's regressor by its fold."""
        regs = {
            f: train_regressor("rf-e", _examples(8, fold=f), ForestParams(n_trees=4, seed=f), TINY_QNET, seed=f)
            for f in (0, 1)
        }
        test = _examples(3, fold=0) + _examples(3, fold=1)
        frame = predictions_frame(regs, test)
        np.testing.assert_array_equal(frame["q_pred"][:3], regs[0].predict(test[:3]))
        np.testing.assert_array_equal(frame["q_pred"][3:], regs[1].predict(test[3:]))
        assert evaluate_quality(regs, test).n == 6

    def test_per_fold_names_must_match(self):
        regs = {
            0: train_regressor("rf-e", _examples(4), ForestParams(n_trees=2), TINY_QNET, seed=0),
            1: train_regressor("rf-a", _examples(4), ForestParams(n_trees=2), TINY_QNET, seed=0),
        }
        with pytest.raises(ConfigError):
            predictions_frame(regs, _examples(2, fold=0) + _examples(2, fold=1))

    def test_no_examples(self):
        regressor = train_regressor("rf-e", _examples(4), ForestParams(n_trees=2), TINY_QNET, seed=0)
        with pytest.raises(ConfigError):
            predictions_frame(regressor, [])


class TestQualityIO:
    """Tests for the quality-stage file formats."""

    def test_feature_table_columns(self):
        frame = feature_table(_examples(3))
        assert frame.shape == (3, 263 + 5)
        assert list(frame.columns[-5:]) == ["target_f1", "patch_id", "sample_id", "combo_mask", "fold"]

    def test_feature_table_without_aleatoric(self):
        """u_a columns are dropped when any bundle lacks an aleatoric map."""
        examples = _examples(2) + _examples(1, with_ua=False)
        frame = feature_table(examples)
        assert frame.shape[1] == 147 + 5
        assert not any(c.startswith("u_a") for c in frame.columns)

    def test_quality_set_round_trip(self, store):
        examples = _examples(5)
        written = write_quality_set(store, "val", examples)
        assert len(written) == 6
        assert written[-1][0] == features_key("val")
        back = read_quality_set(store, "val")
        assert [(e.patch_id, e.sample_id, e.fold, e.availability) for e in back] == [
            (e.patch_id, e.sample_id, e.fold, e.availability) for e in examples
        ]
        assert [e.target for e in back] == [e.target for e in examples]
        np.testing.assert_allclose(back[0].bundle.u_e, examples[0].bundle.u_e, atol=1e-7)

    def test_read_missing_set(self, store):
        with pytest.raises(MissingArtifactError):
            read_quality_set(store, "test")

    def test_predictions_round_trip(self, store):
        regressor = train_regressor("rf-both", _examples(6), ForestParams(n_trees=2), TINY_QNET, seed=0)
        frame = predictions_frame(regressor, _examples(3, fold=1))
        write_predictions(store, "quality/predictions.csv", frame)
        pd.testing.assert_frame_equal(read_predictions(store, "quality/predictions.csv"), frame, check_dtype=False)

    @pytest.mark.parametrize("name", ["rf-a", "cnn"])
    def test_regressor_round_trip(self, store, name):
        regressor = train_regressor(name, _examples(6), ForestParams(n_trees=3), TINY_QNET, seed=0)
        key, digest = save_regressor(store, "models/fold0/", regressor)
        assert key == f"models/fold0/{name}." + ("bin" if name == "cnn" else "json")
        assert store.sha256(key) == digest
        again = load_regressor(store, "models/fold0/", name)
        assert again.name == name
        test = _examples(4, fold=1)
        np.testing.assert_array_equal(again.predict(test), regressor.predict(test))

    def test_load_unknown_regressor(self, store):
        with pytest.raises(ConfigError):
            load_regressor(store, "models/", "svm")

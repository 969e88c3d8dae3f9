"""
Tests for the MS-ME UNet, its variants and training.
"""

from dataclasses import dataclass

import numpy as np
import pytest
from pydantic import ValidationError

from common.errors import ConfigError, MarkerSetError, MissingArtifactError, ShapeError
from msme_segnet.markers import MarkerSet, mask_channels
from msme_segnet.model import (
    ArchConfig,
    MarkerExcite,
    SegVariant,
    VariantKind,
    build_model,
    load_model,
    marker_excite,
    model_from_bytes,
    model_to_bytes,
    save_model,
    seg_forward,
)
from msme_segnet.train import TrainConfig, one_hot_mask, train_segmentation
from nn_core.checkpoint import to_float32_precision
from nn_core.layers import ForwardMode
from nn_core.tensor import Tensor


@dataclass
class Patch:
    patch_id: int
    channels: np.ndarray
    mask: np.ndarray
    availability: MarkerSet


def _patches(n: int, extent: int = 16):
    rng = np.random.default_rng(9)
    out = []
    for i in range(n):
        mask = np.zeros((extent, extent), dtype=np.uint8)
        mask[:, 4 + i : 8 + i] = 1
        channels = 0.1 + 0.05 * rng.random((5, extent, extent))
        channels[:2] += 0.6 * mask
        out.append(Patch(i, channels, mask, MarkerSet.full()))
    return out


class TestSegVariant:
    """Tests for variant parsing."""

    @pytest.mark.parametrize(
        "text,label",
        [
            ("plain", "plain"),
            ("aleatoric", "aleatoric"),
            ("combined(0.2)", "combined(p=0.2)"),
            ("Epistemic(p=0.5, last)", "epistemic(p=0.5,last)"),
            ("conventional(p=0.2)", "conventional(p=0.2)"),
        ],
    )
    def test_labels(self, text, label):
        assert SegVariant.parse(text).label == label

    def test_capabilities(self):
        combined = SegVariant.parse("combined(p=0.2)")
        assert combined.mc_dropout and combined.has_variance_head
        conventional = SegVariant.parse("conventional(p=0.2)")
        assert conventional.has_dropout and not conventional.mc_dropout
        assert SegVariant.parse("aleatoric").kind == VariantKind.ALEATORIC

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            SegVariant.parse("bayesian(0.2)")

    def test_plain_has_no_dropout(self):
        with pytest.raises(ConfigError):
            SegVariant.parse("plain(0.2)")

    def test_arch_extent_divisible(self):
        with pytest.raises(ValidationError):
            ArchConfig(depth=3, patch_extent=20)


class TestForward:
    """Tests for MSMEUNet.forward."""

    def test_output_shapes(self, combined_model, rng):
        x = rng.random((2, 5, 32, 32))
        out = combined_model.forward(x, MarkerSet.full())
        assert out.logits.shape == (2, 2, 32, 32)
        assert out.log_variance.shape == (2, 1, 32, 32)

    def test_plain_has_no_variance_head(self, plain_model, rng):
        out = plain_model.forward(rng.random((1, 5, 32, 32)), MarkerSet.full())
        assert out.log_variance is None

    def test_same_seed_same_parameters(self, small_arch):
        a = build_model(small_arch, SegVariant.parse("plain"), seed=11)
        b = build_model(small_arch, SegVariant.parse("plain"), seed=11)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)

    def test_deterministic_inference_repeats(self, combined_model, rng):
        x = rng.random((1, 5, 32, 32))
        a = combined_model.forward(x, MarkerSet.full(), ForwardMode.DET_INFER).logits.data
        b = combined_model.forward(x, MarkerSet.full(), ForwardMode.DET_INFER).logits.data
        np.testing.assert_array_equal(a, b)

    def test_mc_inference_samples(self, combined_model, rng):
        """Different dropout streams give different MC passes."""
        x = rng.random((1, 5, 32, 32))
        a = combined_model.forward(x, MarkerSet.full(), ForwardMode.MC_INFER, [np.random.default_rng(0)])
        b = combined_model.forward(x, MarkerSet.full(), ForwardMode.MC_INFER, [np.random.default_rng(1)])
        assert not np.array_equal(a.logits.data, b.logits.data)

    def test_wrong_marker_count(self, combined_model):
        with pytest.raises(ShapeError):
            combined_model.forward(np.zeros((1, 4, 32, 32)), np.ones(4))

    def test_extent_not_divisible(self, combined_model):
        with pytest.raises(ShapeError):
            combined_model.forward(np.zeros((1, 5, 30, 30)), MarkerSet.full())

    def test_seg_forward_requires_zero_fill(self, plain_model, rng):
        """Channels outside the availability set must be exactly zero."""
        patch = rng.uniform(0.1, 1.0, (5, 32, 32))
        with pytest.raises(MarkerSetError):
            seg_forward(plain_model, patch, MarkerSet.parse("13"))
        out = seg_forward(plain_model, mask_channels(patch, MarkerSet.parse("13")), MarkerSet.parse("13"))
        assert out.logits.shape == (2, 32, 32)

    def test_availability_changes_output(self, plain_model, rng):
        """The ME gates see the availability vector, not just the zeros."""
        patch = rng.uniform(0.1, 1.0, (5, 32, 32))
        x = mask_channels(patch, MarkerSet.parse("1"))[None]
        a = plain_model.forward(x, MarkerSet.parse("1")).logits.data
        b = plain_model.forward(x, MarkerSet.parse("12")).logits.data
        assert not np.allclose(a, b)


class TestMarkerExcite:
    def test_gate_in_unit_interval(self, rng):
        gate = MarkerExcite(5, 6, 2, rng)
        g = gate.gate(np.stack([MarkerSet.parse("135").vector(), MarkerSet.full().vector()])).data
        assert g.shape == (2, 6)
        assert np.all((g > 0.0) & (g < 1.0))

    def test_scales_channels(self, rng):
        gate = MarkerExcite(5, 3, 2, rng)
        features = Tensor(np.ones((1, 3, 2, 2)))
        out = marker_excite(features, MarkerSet.full(), gate).data
        expected = gate.gate(MarkerSet.full().vector()[None]).data.reshape(3)
        np.testing.assert_allclose(out[0, :, 0, 0], expected)


class TestPersistence:
    """Tests for checkpoint save/load."""

    def test_reload_gives_same_bytes_and_outputs(self, combined_model, rng):
        for p in combined_model.parameters():
            p.data = to_float32_precision(p.data)
        data = model_to_bytes(combined_model)
        again = model_from_bytes(data)
        assert model_to_bytes(again) == data
        assert again.variant == combined_model.variant
        x = rng.random((1, 5, 32, 32))
        np.testing.assert_array_equal(
            again.forward(x, MarkerSet.full()).logits.data,
            combined_model.forward(x, MarkerSet.full()).logits.data,
        )

    def test_save_and_load(self, plain_model, tmp_path):
        save_model(plain_model, tmp_path / "m" / "plain.bin")
        assert load_model(tmp_path / "m" / "plain.bin").parameter_count() == plain_model.parameter_count()

    def test_load_missing(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_model(tmp_path / "none.bin")


class TestTraining:
    """Tests for train_segmentation."""

    def test_one_hot_mask(self):
        y = one_hot_mask(np.array([[0, 1]]))
        np.testing.assert_array_equal(y[:, 0, :], [[1.0, 0.0], [0.0, 1.0]])

    def test_history_and_precision(self):
        arch = ArchConfig(depth=2, base_width=4, patch_extent=16)
        model = build_model(arch, SegVariant.parse("combined(p=0.2)"), seed=1)
        history = train_segmentation(model, _patches(3), TrainConfig(epochs=2, batch_size=2, loss_samples=4), seed=1)
        assert len(history.epoch_losses) == 2
        assert history.steps == 4
        assert all(np.isfinite(history.epoch_losses))
        for p in model.parameters():
            np.testing.assert_array_equal(p.data, to_float32_precision(p.data))

    def test_training_is_reproducible(self):
        arch = ArchConfig(depth=1, base_width=4, patch_extent=16)
        config = TrainConfig(epochs=1, batch_size=2, loss_samples=2)
        states = []
        for _ in range(2):
            model = build_model(arch, SegVariant.parse("epistemic(p=0.2)"), seed=4)
            train_segmentation(model, _patches(2), config, seed=4)
            states.append(model_to_bytes(model))
        assert states[0] == states[1]

    def test_training_changes_parameters(self):
        arch = ArchConfig(depth=1, base_width=4, patch_extent=16)
        model = build_model(arch, SegVariant.parse("plain"), seed=4)
        before = model_to_bytes(model)
        train_segmentation(model, _patches(2), TrainConfig(epochs=1), seed=4)
        assert model_to_bytes(model) != before

    def test_no_patches(self, plain_model):
        with pytest.raises(ConfigError):
            train_segmentation(plain_model, [], TrainConfig(), seed=0)

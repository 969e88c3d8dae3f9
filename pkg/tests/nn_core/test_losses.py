"""
Tests for losses, Adam and the blob container.
"""

import numpy as np
import pytest

from common.errors import MissingArtifactError, ShapeError
from nn_core.checkpoint import MAGIC, decode_blob, encode_blob, read_blob, to_float32_precision, write_blob
from nn_core.losses import LOG_VARIANCE_RANGE, PROB_FLOOR, aleatoric_loss, cross_entropy, mse_loss
from nn_core.optim import AdamState, adam_step
from nn_core.tensor import Tensor


def _labels(rng, shape=(1, 2, 4, 4)):
    cls = rng.integers(0, 2, size=(shape[0],) + shape[2:])
    return np.stack([cls == 0, cls == 1], axis=1).astype(np.float64)


class TestCrossEntropy:
    """Tests for cross_entropy."""

    def test_uniform_prediction(self, rng):
        """A 50/50 prediction costs log 2 per pixel."""
        probs = Tensor(np.full((1, 2, 4, 4), 0.5))
        assert cross_entropy(probs, _labels(rng)).item() == pytest.approx(np.log(2.0))

    def test_confident_prediction(self):
        probs = Tensor(np.array([[[[0.8]], [[0.2]]]]))
        labels = np.array([[[[1.0]], [[0.0]]]])
        assert cross_entropy(probs, labels).item() == pytest.approx(0.2231, abs=1e-4)

    def test_zero_probability_is_floored(self):
        probs = Tensor(np.array([[[[0.0]], [[1.0]]]]))
        labels = np.array([[[[1.0]], [[0.0]]]])
        assert cross_entropy(probs, labels).item() == pytest.approx(-np.log(PROB_FLOOR))

    def test_class_weight(self):
        """Each pixel is scaled by the weight of its true class."""
        probs = Tensor(np.full((1, 2, 1, 2), 0.5))
        labels = np.array([[[[1.0, 0.0]], [[0.0, 1.0]]]])
        weighted = cross_entropy(probs, labels, class_weight=(1.0, 3.0)).item()
        assert weighted == pytest.approx(2.0 * np.log(2.0))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.full((1, 2, 2, 2), 0.5)), np.zeros((1, 2, 3, 3)))


class TestAleatoricLoss:
    """Tests for the noise-injected cross-entropy."""

    def test_clamped_variance_matches_cross_entropy(self, rng):
        """
        At the -20 clamp the logit noise has SD e^-10. Its first-order effect on
        the loss has SD at most sqrt(2) e^-10 / sqrt(T * pixels); the bias is of
        order e^-20. Large T on a 16x16 patch brings the gap under 1e-6.
        """
        shape = (1, 2, 16, 16)
        pixels = shape[2] * shape[3]
        z = Tensor(rng.standard_normal(shape))
        labels = _labels(rng, shape)
        s = Tensor(np.full((1, 1, 16, 16), LOG_VARIANCE_RANGE[0]))
        want = cross_entropy(z.softmax(axis=1), labels).item()
        noise_sd = np.exp(0.5 * LOG_VARIANCE_RANGE[0])
        gaps = {}
        for T in (1, 10, 1000):
            got = aleatoric_loss(z, s, labels, T, np.random.default_rng(T)).item()
            gaps[T] = abs(got - want)
            assert gaps[T] <= 6.0 * np.sqrt(2.0) * noise_sd / np.sqrt(T * pixels) + noise_sd**2
        assert gaps[1000] < 1e-6

    def test_log_variance_below_clamp(self, rng):
        z = Tensor(rng.standard_normal((1, 2, 4, 4)))
        labels = _labels(rng)
        at_clamp = aleatoric_loss(z, Tensor(np.full((1, 1, 4, 4), -20.0)), labels, 8, np.random.default_rng(0))
        below = aleatoric_loss(z, Tensor(np.full((1, 1, 4, 4), -50.0)), labels, 8, np.random.default_rng(0))
        assert below.item() == at_clamp.item()

    def test_symmetric_logits_give_log_two(self):
        """With z = (0, 0) each class has mean softmax 1/2 under any noise level."""
        z = Tensor(np.zeros((1, 2, 4, 4)))
        labels = _labels(np.random.default_rng(5))
        s = Tensor(np.full((1, 1, 4, 4), 1.0))
        loss = aleatoric_loss(z, s, labels, 10_000, np.random.default_rng(6)).item()
        assert loss == pytest.approx(np.log(2.0), abs=0.01)

    def test_accepts_nhw_log_variance(self, rng):
        z = Tensor(rng.standard_normal((2, 2, 3, 3)))
        labels = _labels(rng, (2, 2, 3, 3))
        loss = aleatoric_loss(z, Tensor(np.zeros((2, 3, 3))), labels, 4, np.random.default_rng(1))
        assert np.isfinite(loss.item())

    def test_same_rng_same_loss(self, rng):
        z = Tensor(rng.standard_normal((1, 2, 4, 4)))
        s = Tensor(rng.uniform(-1.0, 1.0, (1, 1, 4, 4)))
        labels = _labels(rng)
        a = aleatoric_loss(z, s, labels, 8, np.random.default_rng(3)).item()
        b = aleatoric_loss(z, s, labels, 8, np.random.default_rng(3)).item()
        assert a == b

    def test_needs_samples(self, rng):
        z = Tensor(rng.standard_normal((1, 2, 2, 2)))
        with pytest.raises(ValueError):
            aleatoric_loss(z, Tensor(np.zeros((1, 1, 2, 2))), _labels(rng, (1, 2, 2, 2)), 0, rng)

    def test_variance_shape_checked(self, rng):
        z = Tensor(rng.standard_normal((1, 2, 2, 2)))
        with pytest.raises(ShapeError):
            aleatoric_loss(z, Tensor(np.zeros((1, 2, 2, 2))), _labels(rng, (1, 2, 2, 2)), 2, rng)

    def test_gradient_reaches_log_variance(self, rng):
        z = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        s = Tensor(np.zeros((1, 1, 4, 4)), requires_grad=True)
        aleatoric_loss(z, s, _labels(rng), 8, np.random.default_rng(0)).backward()
        assert s.grad is not None and np.any(s.grad != 0.0)


class TestMSE:
    def test_value(self):
        assert mse_loss(Tensor(np.array([1.0, 3.0])), np.array([0.0, 1.0])).item() == pytest.approx(2.5)


class TestAdam:
    """Tests for adam_step."""

    def test_first_step_moves_by_learning_rate(self):
        """Bias correction makes the first step lr * sign(g)."""
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        p.grad = np.array([0.5, -2.0])
        state = AdamState.for_parameters([p], learning_rate=0.01)
        adam_step(state, [p])
        np.testing.assert_allclose(p.data, [0.99, -0.99], atol=1e-6)
        assert state.step == 1

    def test_constant_gradient_steps_by_learning_rate(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        state = AdamState.for_parameters([p], learning_rate=0.01)
        moves = []
        for _ in range(2):
            before = p.data.copy()
            p.grad = np.array([0.3])
            adam_step(state, [p])
            moves.append(float(before[0] - p.data[0]))
        assert moves[0] == pytest.approx(0.01, rel=1e-3)
        assert moves[1] == pytest.approx(0.01, rel=0.01)

    def test_missing_gradient_is_zero(self):
        p = Tensor(np.ones(3), requires_grad=True)
        state = AdamState.for_parameters([p])
        adam_step(state, [p])
        np.testing.assert_array_equal(p.data, np.ones(3))

    def test_count_mismatch(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            adam_step(AdamState(), [p])


class TestBlob:
    """Tests for the checkpoint container."""

    def test_values_at_float32_precision(self, rng):
        arrays = {"w": rng.standard_normal((3, 2)), "b": np.zeros(2)}
        meta, back = decode_blob(encode_blob({"kind": "test"}, arrays))
        assert meta == {"kind": "test"}
        assert list(back) == ["w", "b"]
        np.testing.assert_array_equal(back["w"], to_float32_precision(arrays["w"]))

    def test_reencode_is_byte_identical(self, rng):
        blob = encode_blob({"seed": 1}, {"w": rng.standard_normal(5)})
        meta, arrays = decode_blob(blob)
        assert encode_blob(meta, arrays) == blob
        assert blob.startswith(MAGIC)

    def test_bad_magic(self):
        with pytest.raises(ShapeError):
            decode_blob(b"NOTABLOB" + b"\x00" * 8)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            read_blob(tmp_path / "absent.bin")

    def test_write_then_read(self, tmp_path):
        write_blob(tmp_path / "a" / "x.bin", {"n": 2}, {"v": np.arange(2.0)})
        meta, arrays = read_blob(tmp_path / "a" / "x.bin")
        assert meta["n"] == 2
        np.testing.assert_array_equal(arrays["v"], [0.0, 1.0])

"""Tests for the overlap losses, contour weights and weighted cross entropy."""

import itertools
from collections import Counter

import numpy as np
import pytest

from conftest import assert_gradient
from cxr_net.errors import ShapeError, ValidationError
from cxr_net.losses import (
    PROB_FLOOR,
    class_weights,
    contour_weights,
    dice_coeff,
    dice_loss,
    dice_loss_and_grad,
    mask_boundary,
    tanimoto,
    tanimoto_complement,
    tanimoto_complement_and_grad,
    tanimoto_loss,
    weighted_cross_entropy,
    weighted_cross_entropy_and_grad,
    weighted_tanimoto_loss,
    weighted_tanimoto_loss_and_grad,
)


def random_pair(rng, shape=(6, 6)):
    yhat = rng.uniform(0.05, 0.95, size=shape)
    y = (rng.uniform(size=shape) > 0.5).astype(float)
    return yhat, y


def loop_tanimoto(yhat, y, w, s):
    """Weighted Tanimoto coefficient by explicit summation over pixels."""
    p = q = 0.0
    for a, b, c in zip(yhat.ravel(), y.ravel(), w.ravel()):
        p += c * a * b
        q += c * (a * a + b * b)
    return (p + s) / (q - p + s)


class TestDice:

    def test_perfect_overlap(self):
        y = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert dice_loss(y, y) == pytest.approx(0.0)

    def test_empty_prediction(self):
        assert dice_loss(np.zeros(100), np.ones(100), s=1.0) == pytest.approx(1 - 1 / 101)

    def test_half_prediction(self):
        assert dice_coeff(np.full(4, 0.5), np.ones(4), s=0.0) == pytest.approx(2 / 3)
        assert dice_loss(np.full(4, 0.5), np.ones(4), s=0.0) == pytest.approx(1 / 3)

    def test_gradient(self, rng):
        yhat, y = random_pair(rng)
        _, grad = dice_loss_and_grad(yhat, y)
        assert_gradient(lambda: dice_loss(yhat, y), yhat, grad, rtol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_loss(np.zeros(3), np.zeros(4))


class TestTanimoto:

    def test_perfect_overlap(self):
        y = np.array([1.0, 0.0, 1.0, 1.0])
        assert tanimoto_complement(y, y) == pytest.approx(1.0)
        assert tanimoto_loss(y, y) == pytest.approx(0.0)

    def test_inverted_prediction(self):
        y = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        assert tanimoto(1 - y, y, s=1.0) == pytest.approx(1 / 11)
        assert tanimoto(y, 1 - y, s=1.0) == pytest.approx(1 / 11)
        assert tanimoto_loss(1 - y, y, s=1.0) == pytest.approx(10 / 11)

    def test_complement_symmetry(self, rng):
        for _ in range(5):
            _, y = random_pair(rng)
            yhat = rng.integers(1, 64, size=y.shape) / 64.0
            assert tanimoto_complement(yhat, y) == tanimoto_complement(1 - yhat, 1 - y)

    def test_relation_to_dice_on_binary_masks(self):
        checked = 0
        for bits in itertools.product((0.0, 1.0), repeat=8):
            a, b = np.array(bits[:4]), np.array(bits[4:])
            if not (a.any() or b.any()):
                continue
            d = dice_coeff(a, b, s=0.0)
            assert tanimoto(a, b, s=0.0) == pytest.approx(d / (2 - d))
            checked += 1
        assert checked == 255

    def test_loss_range(self, rng):
        for _ in range(10):
            yhat, y = random_pair(rng)
            assert 0.0 <= tanimoto_loss(yhat, y) <= 1.0

    def test_gradient(self, rng):
        yhat, y = random_pair(rng)
        _, grad = tanimoto_complement_and_grad(yhat, y)
        assert_gradient(lambda: tanimoto_complement(yhat, y), yhat, grad, rtol=1e-5)

    def test_raising_true_pixels_never_hurts(self, rng):
        for _ in range(10):
            yhat, y = random_pair(rng)
            _, grad = weighted_tanimoto_loss_and_grad(yhat, y, np.ones(y.shape))
            assert np.all(grad[y == 1] <= 0.0)


class TestWeightedTanimoto:

    def test_unit_weights_match_unweighted(self, rng):
        yhat, y = random_pair(rng)
        assert weighted_tanimoto_loss(yhat, y, np.ones(y.shape)) == pytest.approx(tanimoto_loss(yhat, y))

    def test_matches_loop_oracle(self, rng):
        yhat, y = random_pair(rng, (7, 5))
        w = rng.uniform(0.5, 3.0, size=y.shape)
        expected = 1 - 0.5 * (loop_tanimoto(yhat, y, w, 1.0) + loop_tanimoto(1 - yhat, 1 - y, w, 1.0))
        assert abs(weighted_tanimoto_loss(yhat, y, w) - expected) < 1e-12

    def test_zero_weight_pixels_are_ignored(self, rng):
        yhat, y = random_pair(rng)
        w = np.ones(y.shape)
        w[:2] = 0.0
        base = weighted_tanimoto_loss(yhat, y, w)
        yhat[:2] = rng.uniform(size=yhat[:2].shape)
        assert weighted_tanimoto_loss(yhat, y, w) == pytest.approx(base, abs=1e-15)

    def test_two_channel_average(self, rng):
        lung = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
        y = np.stack([lung, 1 - lung], axis=-1)
        yhat = rng.uniform(0.05, 0.95, size=(6, 6, 2))
        w = rng.uniform(1.0, 3.0, size=(6, 6))
        expected = 0.5 * (weighted_tanimoto_loss(yhat[..., 0], lung, w)
                          + weighted_tanimoto_loss(yhat[..., 1], 1 - lung, w))
        assert weighted_tanimoto_loss(yhat, y, w) == pytest.approx(expected)
        lung_only = 0.5 * (weighted_tanimoto_loss(yhat[..., 0], lung, w)
                           + tanimoto_loss(yhat[..., 1], 1 - lung))
        assert weighted_tanimoto_loss(yhat, y, w, lung_only=True) == pytest.approx(lung_only)

    @pytest.mark.parametrize("lung_only", [False, True])
    def test_gradient(self, rng, lung_only):
        lung = (rng.uniform(size=(5, 6)) > 0.5).astype(float)
        y = np.stack([lung, 1 - lung], axis=-1)
        yhat = rng.uniform(0.05, 0.95, size=(5, 6, 2))
        w = contour_weights(lung, sigma_px=1.5)
        _, grad = weighted_tanimoto_loss_and_grad(yhat, y, w, lung_only=lung_only)
        assert_gradient(lambda: weighted_tanimoto_loss(yhat, y, w, lung_only=lung_only),
                        yhat, grad, rtol=1e-5)

    def test_negative_weight(self, rng):
        yhat, y = random_pair(rng)
        w = np.ones(y.shape)
        w[0, 0] = -1.0
        with pytest.raises(ValidationError):
            weighted_tanimoto_loss(yhat, y, w)

    def test_weight_shape(self, rng):
        yhat, y = random_pair(rng)
        with pytest.raises(ShapeError):
            weighted_tanimoto_loss(yhat[..., None], y[..., None], np.ones((3, 3)))


class TestContourWeights:

    def test_no_boundary(self):
        np.testing.assert_array_equal(contour_weights(np.zeros((8, 8))), 1.0)
        np.testing.assert_array_equal(contour_weights(np.ones((8, 8))), 1.0)

    def test_boundary_pixels_get_full_boost(self):
        mask = np.zeros((8, 8))
        mask[2:6, 2:6] = 1
        w = contour_weights(mask, w0=2.0)
        np.testing.assert_allclose(w[mask_boundary(mask)], 3.0)
        assert w[2, 4] == pytest.approx(3.0)
        assert w[4, 4] < 3.0

    def test_half_plane_against_all_pairs_distance(self):
        mask = np.zeros((8, 8))
        mask[:, :4] = 1
        w0, sigma = 2.0, 3.0
        boundary = np.argwhere(mask_boundary(mask))
        np.testing.assert_array_equal(boundary[:, 1], 3)
        expected = np.empty((8, 8))
        for r, c in itertools.product(range(8), range(8)):
            d2 = min((r - br) ** 2 + (c - bc) ** 2 for br, bc in boundary)
            expected[r, c] = 1 + w0 * np.exp(-d2 / (2 * sigma ** 2))
        assert np.abs(contour_weights(mask, w0, sigma) - expected).max() < 1e-9

    def test_rejects_stacks(self):
        with pytest.raises(ShapeError):
            contour_weights(np.zeros((2, 8, 8)))


class TestCrossEntropy:

    def test_perfect_predictions(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert weighted_cross_entropy(probs, [0, 1], [1.0, 1.0]) == pytest.approx(0.0)

    def test_uniform_predictions(self):
        probs = np.full((6, 2), 0.5)
        assert weighted_cross_entropy(probs, [0, 1, 0, 1, 1, 0], [1.0, 1.0]) == pytest.approx(np.log(2))

    def test_imbalanced_batch(self):
        labels = np.array([0, 0, 0, 1])
        w = class_weights(labels)
        np.testing.assert_allclose(w, [4 / 6, 2.0])
        probs = np.array([[0.9, 0.1], [0.6, 0.4], [0.7, 0.3], [0.2, 0.8]])
        expected = -(w[0] * (np.log(0.9) + np.log(0.6) + np.log(0.7)) + w[1] * np.log(0.8)) / 4
        assert weighted_cross_entropy(probs, labels, w) == pytest.approx(expected)

    def test_class_weights_absent_class(self):
        np.testing.assert_allclose(class_weights([1, 1]), [0.0, 0.5])

    def test_gradient(self, rng):
        probs = rng.uniform(0.1, 1.0, size=(5, 2))
        probs /= probs.sum(axis=1, keepdims=True)
        labels = np.array([0, 1, 1, 0, 1])
        weights = np.array([1.5, 0.75])
        _, grad = weighted_cross_entropy_and_grad(probs, labels, weights)
        assert_gradient(lambda: weighted_cross_entropy(probs, labels, weights), probs, grad, rtol=1e-5)

    def test_clamp_is_counted(self, caplog):
        counter = Counter()
        probs = np.array([[0.0, 1.0], [0.5, 0.5]])
        value, grad = weighted_cross_entropy_and_grad(probs, [0, 0], [1.0, 1.0], counter)
        assert counter["clamped"] == 1
        assert value == pytest.approx(-(np.log(PROB_FLOOR) + np.log(0.5)) / 2)
        assert grad[0, 0] == 0.0
        assert "Clamped" in caplog.text

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            weighted_cross_entropy(np.full((3, 2), 0.5), [0, 1], [1.0, 1.0])

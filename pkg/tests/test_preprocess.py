"""Tests for resizing, equalization and standardization."""

import numpy as np
import pytest
from scipy import stats

from cxr_net.datapipe.preprocess import (
    apply_standardization,
    hist_equalize,
    preprocess_for_classification,
    resize_mask,
    resize_to,
    rescale_unit,
    standardize,
)
from cxr_net.errors import ShapeError, ValidationError


class TestResize:

    def test_target_extent_is_unchanged(self, rng):
        image = rng.uniform(size=(300, 340))
        np.testing.assert_allclose(resize_to(image), image, atol=1e-12)

    def test_constant_stays_constant(self):
        np.testing.assert_allclose(resize_to(np.full((37, 51), 0.3), 20, 90), 0.3)

    def test_linear_ramp_is_exact(self):
        rows, cols = np.indices((600, 680), dtype=np.float64)
        ramp = 0.001 * rows + 0.0005 * cols
        out = resize_to(ramp, 300, 340)
        i, j = np.indices((300, 340), dtype=np.float64)
        expected = 0.001 * i * 599 / 299 + 0.0005 * j * 679 / 339
        assert np.abs(out - expected).max() < 1e-9

    def test_channels_resized_independently(self, rng):
        image = rng.uniform(size=(10, 12, 3))
        out = resize_to(image, 5, 7)
        assert out.shape == (5, 7, 3)
        np.testing.assert_allclose(out[..., 1], resize_to(image[..., 1], 5, 7))

    @pytest.mark.parametrize("shape", [(1, 10), (10,), (2, 2, 2, 2)])
    def test_degenerate(self, shape):
        with pytest.raises(ShapeError):
            resize_to(np.zeros(shape), 4, 4)

    def test_binary_mask_stays_binary(self, rng):
        mask = (rng.uniform(size=(13, 17)) > 0.5).astype(float)
        out = resize_mask(mask, (30, 40), binary=True)
        assert set(np.unique(out)) <= {0.0, 1.0}
        soft = resize_mask(mask, (30, 40))
        assert soft.min() >= 0.0 and soft.max() <= 1.0


class TestHistEqualize:

    def test_uniform_histogram_is_nearly_identity(self):
        image = np.tile((np.arange(256) + 0.5) / 256, (4, 1))
        assert np.abs(hist_equalize(image) - image).max() <= 1 / 256

    def test_levels_share_one_of_256_bins(self):
        image = np.linspace(0.0, 1.0, 4096).reshape(64, 64)
        out = hist_equalize(image)
        assert np.unique(out).size == 256
        # 0.1 and 0.1 + 1e-4 fall into the same bin
        pair = hist_equalize(np.r_[np.full(8, 0.1), np.full(8, 0.1 + 1e-4), np.linspace(0, 1, 16)])
        assert pair[0] == pair[8]

    def test_two_levels(self):
        image = np.array([[0.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(hist_equalize(image), [[0.5, 0.5], [1.0, 1.0]])

    def test_output_is_nearly_uniform(self, rng):
        out = hist_equalize(rng.beta(2.0, 5.0, size=(120, 120)))
        assert stats.kstest(out.ravel(), "uniform").statistic < 0.05

    def test_monotone(self, rng):
        values = np.sort(rng.uniform(size=500))
        assert np.all(np.diff(hist_equalize(values)) >= 0)

    def test_range(self, rng):
        out = hist_equalize(rng.uniform(size=(20, 20)))
        assert out.min() > 0.0 and out.max() == 1.0


class TestStandardize:

    def test_training_pool_is_normalized(self, rng):
        images = rng.normal(0.4, 0.2, size=(6, 8, 8))
        out, mean, std = standardize(images, train_index=[0, 1, 2, 3])
        assert abs(out[:4].mean()) < 1e-10
        assert abs(out[:4].std() - 1.0) < 1e-10
        assert mean == pytest.approx(images[:4].mean())
        np.testing.assert_allclose(out[4:], (images[4:] - mean) / std)

    def test_hand_computed(self):
        out, mean, std = standardize(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
        assert mean == 1.5 and std == pytest.approx(np.sqrt(1.25))
        np.testing.assert_allclose(out.ravel(), (np.arange(4) - 1.5) / np.sqrt(1.25))

    def test_constant_pool(self):
        with pytest.raises(ValidationError):
            standardize(np.ones((2, 3, 3)))

    def test_non_positive_std(self):
        with pytest.raises(ValidationError):
            apply_standardization(np.ones(3), 0.0, 0.0)

    def test_classification_chain(self, rng):
        image = rng.uniform(size=(40, 50))
        out = preprocess_for_classification(image, 0.5, 0.25, shape=(20, 30))
        assert out.shape == (20, 30)
        np.testing.assert_allclose(out, (hist_equalize(resize_to(image, 20, 30)) - 0.5) / 0.25)


class TestRescale:

    def test_unit_range(self, rng):
        out = rescale_unit(rng.normal(size=(5, 5)))
        assert out.min() == 0.0 and out.max() == 1.0

    def test_constant(self):
        np.testing.assert_array_equal(rescale_unit(np.full((3, 3), 4.0)), 0.0)

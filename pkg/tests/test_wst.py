"""Tests for the Morlet filter bank and the scattering transform."""

import itertools

import numpy as np
import pytest

from cxr_net.errors import ParameterError, ShapeError, ValidationError
from cxr_net.wst import (
    PathDescriptor,
    ScatterConfig,
    build_filterbank,
    channel_count,
    get_filterbank,
    path_index,
    scatter,
    wst_block,
)


def circular_conv(x, k):
    """Direct spatial circular convolution, one shifted copy of k per input pixel."""
    out = np.zeros(x.shape, dtype=np.complex128)
    H, W = x.shape
    for m in range(H):
        for n in range(W):
            out += x[m, n] * np.roll(k, (m, n), axis=(0, 1))
    return out


def naive_scatter(x, fb, cfg):
    """Every path computed separately in the spatial domain."""
    J, L, f = cfg.J, cfg.L, cfg.factor
    psi = [[np.fft.ifft2(fb.psi_hat[j, t]) for t in range(L)] for j in range(J)]
    phi = np.fft.ifft2(fb.phi_hat)

    def average(u):
        return circular_conv(u, phi).real[::f, ::f]

    channels = [average(x)]
    for j1, t1 in itertools.product(range(J), range(L)):
        channels.append(average(np.abs(circular_conv(x, psi[j1][t1]))))
    for j1, t1 in itertools.product(range(J), range(L)):
        u1 = np.abs(circular_conv(x, psi[j1][t1]))
        for j2 in range(j1 + 1, J):
            for t2 in range(L):
                channels.append(average(np.abs(circular_conv(u1, psi[j2][t2]))))
    return np.stack(channels, axis=-1)


def smooth_image(size=64):
    rows, cols = np.indices((size, size), dtype=np.float64)
    image = np.zeros((size, size))
    for r, c, s, a in [(20, 22, 6.0, 1.0), (40, 44, 8.0, 0.7), (30, 12, 5.0, -0.5)]:
        image += a * np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / (2 * s * s))
    return image


def pink_noise(size, seed):
    rng = np.random.default_rng(seed)
    freqs = np.sqrt(np.fft.fftfreq(size)[:, None] ** 2 + np.fft.fftfreq(size)[None, :] ** 2)
    freqs[0, 0] = 1.0
    spectrum = (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))) / freqs
    return np.fft.ifft2(spectrum).real


class TestChannelCount:

    def test_default_geometry(self):
        assert channel_count(2, 6) == 49

    @pytest.mark.parametrize("L", [1, 2, 6, 8])
    def test_single_scale_has_no_second_order(self, L):
        assert channel_count(1, L) == 1 + L

    def test_matches_enumeration(self):
        J, L = 3, 4
        paths = path_index(J, L)
        brute = 1 + J * L + sum(1 for j1, j2 in itertools.product(range(J), repeat=2) if j2 > j1) * L * L
        assert channel_count(J, L) == len(paths) == brute == 61

    def test_path_order(self):
        paths = path_index(2, 2)
        assert paths[0] == PathDescriptor(0)
        assert all(p.order == 1 for p in paths[1:5])
        assert all(p.j2 > p.j1 for p in paths if p.order == 2)
        assert sum(p.order == 2 for p in paths) == (2 * 1 * 4) // 2

    def test_invalid(self):
        with pytest.raises(ParameterError):
            channel_count(0, 6)


class TestFilterBank:

    def test_default_bank_shapes(self):
        fb = get_filterbank(ScatterConfig())
        assert fb.psi_hat.shape == (2, 6, 300, 340)
        assert fb.phi_hat.shape == (300, 340)

    @pytest.mark.parametrize("cfg", [ScatterConfig(1, 2, 16, 16), ScatterConfig(2, 6, 32, 40),
                                     ScatterConfig(3, 4, 24, 24)])
    def test_zero_mean_wavelets_and_unit_lowpass(self, cfg):
        fb = build_filterbank(cfg)
        assert np.abs(fb.psi_hat[..., 0, 0]).max() < 1e-7
        assert fb.phi_hat[0, 0] == pytest.approx(1.0)

    def test_littlewood_paley_bounds(self):
        fb = build_filterbank(ScatterConfig(1, 2, 16, 16))
        assert fb.lp_max <= 1.01
        assert fb.lp_min > 0.0
        assert fb.frame_bound == pytest.approx(np.sqrt(fb.lp_max))

    def test_scale_too_large(self):
        with pytest.raises(ParameterError):
            build_filterbank(ScatterConfig(J=4, L=2, H=8, W=32))

    def test_cached_bank_is_shared(self):
        cfg = ScatterConfig(1, 2, 12, 12)
        assert get_filterbank(cfg) is get_filterbank(ScatterConfig(1, 2, 12, 12))


class TestScatter:

    def test_constant_image(self):
        cfg = ScatterConfig(2, 4, 32, 32)
        coeffs = scatter(np.full((32, 32), 0.7), get_filterbank(cfg), cfg).coeffs
        np.testing.assert_allclose(coeffs[..., 0], 0.7, atol=1e-12)
        assert np.abs(coeffs[..., 1:]).max() < 1e-9

    def test_full_resolution_output(self, rng):
        cfg = ScatterConfig()
        out = scatter(rng.normal(size=(300, 340)), get_filterbank(cfg), cfg)
        assert out.coeffs.shape == (75, 85, 49)
        assert len(out.path_index) == 49

    def test_delta_matches_spatial_oracle(self):
        cfg = ScatterConfig(1, 2, 8, 8)
        x = np.zeros((8, 8))
        x[3, 4] = 1.0
        fb = build_filterbank(cfg)
        expected = naive_scatter(x, fb, cfg)
        got = scatter(x, fb, cfg).coeffs
        assert np.abs(got - expected).max() / np.abs(expected).max() < 1e-6

    @pytest.mark.parametrize("size,J", [(8, 1), (8, 2), (12, 1), (12, 2)])
    def test_random_matches_spatial_oracle(self, size, J):
        cfg = ScatterConfig(J, 2, size, size)
        x = np.random.default_rng(size + J).normal(size=(size, size))
        fb = build_filterbank(cfg)
        expected = naive_scatter(x, fb, cfg)
        got = scatter(x, fb, cfg).coeffs
        assert got.shape == expected.shape
        assert np.abs(got - expected).max() / np.abs(expected).max() < 1e-6

    def test_translation_tolerance_grows_with_scale(self):
        x = smooth_image()
        shifted = np.roll(x, 2, axis=1)
        changes = []
        for J in (1, 2):
            cfg = ScatterConfig(J, 4, 64, 64)
            fb = get_filterbank(cfg)
            a = scatter(x, fb, cfg).coeffs
            b = scatter(shifted, fb, cfg).coeffs
            changes.append(np.linalg.norm(b - a) / np.linalg.norm(a))
        assert changes[1] < changes[0]

    def test_non_expansive(self, rng):
        cfg = ScatterConfig(2, 4, 32, 32)
        fb = get_filterbank(cfg)
        for _ in range(3):
            x, y = rng.normal(size=(32, 32)), rng.normal(size=(32, 32))
            gap = np.linalg.norm(scatter(x, fb, cfg).coeffs - scatter(y, fb, cfg).coeffs)
            assert gap <= fb.frame_bound * np.linalg.norm(x - y) * (1 + 1e-9)

    def test_second_order_energy_is_smaller(self):
        cfg = ScatterConfig(2, 4, 32, 32)
        out = scatter(pink_noise(32, seed=5), get_filterbank(cfg), cfg)
        orders = np.array([p.order for p in out.path_index])
        energy = (out.coeffs ** 2).sum(axis=(0, 1))
        assert energy[orders == 2].sum() < energy[orders == 1].sum()

    def test_shape_mismatch(self):
        cfg = ScatterConfig(1, 2, 16, 16)
        with pytest.raises(ShapeError):
            scatter(np.zeros((16, 12)), get_filterbank(cfg), cfg)


class TestWSTBlock:

    def test_default_shapes(self, rng):
        features, binary = wst_block(rng.normal(size=(300, 340)), np.ones((300, 340)), ScatterConfig())
        assert features.shape == (75, 85, 50)
        assert binary.shape == (75, 85, 1)
        np.testing.assert_array_equal(features[..., 49], 1.0)
        np.testing.assert_array_equal(binary, 1.0)

    def test_threshold_is_inclusive(self, rng):
        cfg = ScatterConfig(1, 2, 16, 16)
        _, binary = wst_block(rng.normal(size=(16, 16)), np.full((16, 16), 0.5), cfg)
        np.testing.assert_array_equal(binary, 1.0)

    def test_mask_appended_after_decimation(self, rng):
        cfg = ScatterConfig(1, 2, 16, 16)
        mask = rng.uniform(size=(16, 16))
        features, binary = wst_block(rng.normal(size=(16, 16)), mask, cfg)
        np.testing.assert_array_equal(features[..., -1], mask[::2, ::2])
        np.testing.assert_array_equal(binary[..., 0], (mask[::2, ::2] >= 0.5).astype(float))

    def test_mask_out_of_range(self):
        cfg = ScatterConfig(1, 2, 16, 16)
        with pytest.raises(ValidationError):
            wst_block(np.zeros((16, 16)), np.full((16, 16), 1.2), cfg)

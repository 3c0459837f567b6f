"""Shared fixtures and the finite-difference gradient checker."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from cxr_net.classifier import ClfConfig  # noqa: E402
from cxr_net.datapipe.phantoms import PhantomGenerator  # noqa: E402
from cxr_net.datapipe.samples import NEGATIVE, POSITIVE, Sample, seg_truth_from_mask  # noqa: E402
from cxr_net.wst import ScatterConfig  # noqa: E402

FD_EPS = 1e-5


def check_gradient(f, x, analytic, n_probes=20, eps=FD_EPS, seed=0):
    """
    Compare ``analytic`` against central differences of scalar ``f`` at
    ``n_probes`` random entries of ``x``; ``x`` is perturbed in place and
    restored.

    Returns:
        (numeric, analytic) arrays over the probed entries
    """
    rng = np.random.default_rng(seed)
    flat = x.reshape(-1)
    probes = rng.choice(flat.size, size=min(n_probes, flat.size), replace=False)
    numeric, expected = [], []
    for i in probes:
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        numeric.append((up - down) / (2.0 * eps))
        expected.append(np.asarray(analytic).reshape(-1)[i])
    return np.array(numeric), np.array(expected)


def assert_gradient(f, x, analytic, rtol=1e-4, atol=1e-8, n_probes=20, seed=0):
    numeric, expected = check_gradient(f, x, analytic, n_probes, seed=seed)
    np.testing.assert_allclose(expected, numeric, rtol=rtol, atol=atol)


def make_sample(i, size=16, positive=True, group=None, with_truth=True):
    """Square sample with a centred disc mask."""
    rng = np.random.default_rng(i)
    rows, cols = np.indices((size, size))
    mask = (((rows - size / 2) ** 2 + (cols - size / 2) ** 2) <= (size / 3) ** 2).astype(float)
    image = np.clip(0.3 + 0.4 * mask + rng.normal(0.0, 0.05, (size, size)), 0.0, 1.0)
    return Sample(
        id=f"s{i:03d}",
        image=image,
        float_mask=mask,
        seg_truth=seg_truth_from_mask(mask) if with_truth else None,
        label=POSITIVE if positive else NEGATIVE,
        group=group or f"g{i:03d}",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def disc_samples():
    """Twelve 16x16 samples, alternating labels, one group each."""
    return [make_sample(i, positive=i % 2 == 0) for i in range(12)]


@pytest.fixture(scope="session")
def phantoms():
    """Twelve 32x32 phantoms (40% positive) with their anatomy."""
    return PhantomGenerator(32, seed=3).generate(12, 0.4)


@pytest.fixture
def small_clf_config():
    """Light classifier for graph-level tests on 16x16 inputs."""
    return ClfConfig(scatter=ScatterConfig(J=1, L=2, H=16, W=16), n_blocks=1,
                     dilations=(1, 2), branch_filters=3, shortcut_filters=6,
                     heads=1, head_size=4, dropout=0.0)

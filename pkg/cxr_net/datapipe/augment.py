"""
Deterministic geometric augmentation

Every sample gets one random composite of rotation, shear, shift, scale and
mirroring drawn from a counter-based Philox stream keyed by
(seed, epoch, sample index). The same sampling grid is applied to the image
(bilinear), the float mask (bilinear) and the binary truth (nearest).
Vacated regions are filled by reflection.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from ..errors import ParameterError
from .samples import Sample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    """Magnitude ranges; every draw is uniform within +/- the value."""
    rotation_deg: float = 10.0
    shear_deg: float = 5.0
    shift_frac: float = 0.1
    scale_min: float = 0.9
    scale_max: float = 1.1
    hflip_p: float = 0.5
    vflip_p: float = 0.5

    def validate(self) -> "AugmentConfig":
        if min(self.rotation_deg, self.shear_deg, self.shift_frac) < 0:
            raise ParameterError("augmentation magnitudes must be non-negative")
        if not 0 < self.scale_min <= self.scale_max:
            raise ParameterError(f"invalid scale range [{self.scale_min}, {self.scale_max}]")
        for p in (self.hflip_p, self.vflip_p):
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"flip probability {p} outside [0, 1]")
        return self

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for one (seed, stream...) key, independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass(frozen=True)
class AffineWarp:
    """Output-to-input sampling map q = A (p - c - t) + c on centered pixel coordinates."""
    matrix: np.ndarray
    shift: np.ndarray

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.eye(2)) and not self.shift.any())

    def coordinates(self, shape: Tuple[int, int]) -> np.ndarray:
        center = (np.array(shape, dtype=np.float64) - 1.0) / 2.0
        grid = np.indices(shape, dtype=np.float64).reshape(2, -1)
        src = self.matrix @ (grid - center[:, None] - self.shift[:, None]) + center[:, None]
        return src.reshape((2,) + tuple(shape))

    def apply(self, t: np.ndarray, order: int) -> np.ndarray:
        """Warp [H, W] or [H, W, C]; order 1 bilinear, 0 nearest."""
        if self.is_identity:
            return np.array(t, dtype=np.float64, copy=True)
        coords = self.coordinates(t.shape[:2])
        if t.ndim == 2:
            return ndimage.map_coordinates(t, coords, order=order, mode="reflect")
        return np.stack([ndimage.map_coordinates(t[..., c], coords, order=order, mode="reflect")
                         for c in range(t.shape[2])], axis=-1)


def draw_warp(cfg: AugmentConfig, shape: Tuple[int, int], rng: np.random.Generator) -> AffineWarp:
    """Draw one composite transform; the number of draws is fixed so streams stay aligned."""
    u = rng.uniform(-1.0, 1.0, size=5)
    flips = rng.uniform(0.0, 1.0, size=2)
    theta = np.deg2rad(cfg.rotation_deg) * u[0]
    shear = np.deg2rad(cfg.shear_deg) * u[1]
    scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * (u[2] + 1.0) / 2.0
    shift = cfg.shift_frac * u[3:5] * np.array(shape, dtype=np.float64)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shearing = np.array([[1.0, np.tan(shear)], [0.0, 1.0]])
    mirror = np.diag([-1.0 if flips[0] < cfg.vflip_p else 1.0,
                      -1.0 if flips[1] < cfg.hflip_p else 1.0])
    forward = rotation @ shearing @ (scale * np.eye(2)) @ mirror
    return AffineWarp(matrix=np.linalg.inv(forward), shift=shift)


def augment(sample: Sample, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Sample:
    """Return a geometrically augmented copy of ``sample``."""
    warp = draw_warp(cfg, sample.shape, rng)
    arrays = {"image": warp.apply(sample.image, order=1)}
    if sample.float_mask is not None:
        arrays["float_mask"] = np.clip(warp.apply(sample.float_mask, order=1), 0.0, 1.0)
    if sample.seg_truth is not None:
        arrays["seg_truth"] = warp.apply(sample.seg_truth, order=0)
    return sample.with_arrays(**arrays)

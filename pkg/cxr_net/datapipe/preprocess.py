"""
Preprocessing

Bilinear resizing, global histogram equalization, training-set
standardization and the two per-module preprocessing chains.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

TARGET_SHAPE = (300, 340)
N_BINS = 256


def _sample_grid(in_shape, out_shape) -> np.ndarray:
    # corner-aligned: output pixel 0 and -1 land on input pixel 0 and -1
    axes = [np.linspace(0.0, n_in - 1.0, n_out) for n_in, n_out in zip(in_shape, out_shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resize_to(t, height: int = TARGET_SHAPE[0], width: int = TARGET_SHAPE[1],
              order: int = 1) -> np.ndarray:
    """
    Resample a [H, W] or [H, W, C] image to ``height`` x ``width``.

    ``order`` 1 is bilinear; 0 gives nearest-neighbour for label maps.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim not in (2, 3) or t.shape[0] < 2 or t.shape[1] < 2:
        raise ShapeError(f"cannot resize degenerate image of shape {t.shape}")
    if height < 1 or width < 1:
        raise ShapeError(f"invalid target extent {height}x{width}")
    if t.shape[:2] == (height, width):
        return t.copy()
    grid = _sample_grid(t.shape[:2], (height, width))
    if t.ndim == 2:
        return ndimage.map_coordinates(t, grid, order=order, mode="nearest")
    return np.stack([ndimage.map_coordinates(t[..., c], grid, order=order, mode="nearest")
                     for c in range(t.shape[2])], axis=-1)


def _bin_index(t: np.ndarray) -> np.ndarray:
    return np.minimum((np.clip(t, 0.0, 1.0) * N_BINS).astype(np.int64), N_BINS - 1)


def hist_equalize(t) -> np.ndarray:
    """Map each pixel to the empirical CDF of its 256-bin histogram bin."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        return t.copy()
    bins = _bin_index(t)
    cdf = np.cumsum(np.bincount(bins.ravel(), minlength=N_BINS)) / t.size
    return cdf[bins]


def standardize(images, train_index: Optional[Sequence[int]] = None
                ) -> Tuple[np.ndarray, float, float]:
    """
    Standardize a stack of images with statistics of the training subset.

    Args:
        images: [N, H, W] stack
        train_index: Indices of training images; all images when omitted

    Returns:
        (standardized stack, mean, std)
    """
    images = np.asarray(images, dtype=np.float64)
    pool = images if train_index is None else images[np.asarray(train_index, dtype=int)]
    if pool.size == 0:
        raise ValidationError("standardization needs a non-empty training subset")
    mean = float(pool.mean())
    std = float(pool.std())
    if std == 0.0:
        raise ValidationError("training subset has zero standard deviation")
    return apply_standardization(images, mean, std), mean, std


def apply_standardization(images, mean: float, std: float) -> np.ndarray:
    if std <= 0.0:
        raise ValidationError(f"standard deviation must be positive, got {std}")
    return (np.asarray(images, dtype=np.float64) - mean) / std


def rescale_unit(t) -> np.ndarray:
    """Affine per-image rescale to [0, 1]; a constant image maps to zeros."""
    t = np.asarray(t, dtype=np.float64)
    lo, hi = float(t.min()), float(t.max())
    if hi == lo:
        return np.zeros_like(t)
    return (t - lo) / (hi - lo)


def preprocess_for_segmentation(image, shape: Tuple[int, int] = TARGET_SHAPE) -> np.ndarray:
    """Resize, then equalize."""
    return hist_equalize(resize_to(image, *shape))


def preprocess_for_classification(image, mean: float, std: float,
                                  shape: Tuple[int, int] = TARGET_SHAPE) -> np.ndarray:
    """Resize, equalize, then standardize with stored training statistics."""
    return apply_standardization(preprocess_for_segmentation(image, shape), mean, std)


def resize_mask(mask, shape: Tuple[int, int], binary: bool = False) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[:2] == tuple(shape):
        return mask.copy()
    return np.clip(resize_to(mask, *shape, order=0 if binary else 1), 0.0, 1.0)

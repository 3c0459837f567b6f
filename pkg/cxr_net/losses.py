"""
Loss functions

Dice and Tanimoto overlap losses (with complement and per-pixel weights),
contour-aware weight maps, and class-weighted cross entropy. Each loss has
an ``*_and_grad`` form returning (value, d loss / d prediction) for the
training loops.
"""

import logging
from collections import Counter
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SMOOTH = 1.0
DEFAULT_W0 = 2.0
DEFAULT_SIGMA_PX = 3.0
PROB_FLOOR = 1e-12


def _pair(yhat, y) -> Tuple[np.ndarray, np.ndarray]:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape:
        raise ShapeError(f"prediction {yhat.shape} and truth {y.shape} differ")
    return yhat, y


def dice_coeff_and_grad(yhat, y, s: float = DEFAULT_SMOOTH):
    """(2 sum(yhat*y) + s) / (sum(yhat) + sum(y) + s) and its gradient."""
    yhat, y = _pair(yhat, y)
    num = 2.0 * np.sum(yhat * y) + s
    den = np.sum(yhat) + np.sum(y) + s
    grad = (2.0 * y * den - num) / den ** 2
    return num / den, grad


def dice_coeff(yhat, y, s: float = DEFAULT_SMOOTH) -> float:
    return float(dice_coeff_and_grad(yhat, y, s)[0])


def dice_loss(yhat, y, s: float = DEFAULT_SMOOTH) -> float:
    return 1.0 - dice_coeff(yhat, y, s)


def dice_loss_and_grad(yhat, y, s: float = DEFAULT_SMOOTH):
    coeff, grad = dice_coeff_and_grad(yhat, y, s)
    return 1.0 - coeff, -grad


def _tanimoto_and_grad(yhat, y, w, s):
    """T = (P + s) / (Q - P + s) with P = sum(w yhat y), Q = sum(w (yhat^2 + y^2))."""
    P = np.sum(w * yhat * y)
    Q = np.sum(w * (yhat * yhat + y * y))
    den = Q - P + s
    grad = (w * y * den - (P + s) * (2.0 * w * yhat - w * y)) / den ** 2
    return (P + s) / den, grad


def _weights_like(w, shape) -> np.ndarray:
    if w is None:
        return np.ones(shape)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != shape:
        raise ShapeError(f"weight map {w.shape} does not match {shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and non-negative")
    return w


def tanimoto(yhat, y, s: float = DEFAULT_SMOOTH, w=None) -> float:
    """Tanimoto coefficient of a prediction against a binary truth."""
    yhat, y = _pair(yhat, y)
    return float(_tanimoto_and_grad(yhat, y, _weights_like(w, y.shape), s)[0])


def tanimoto_complement_and_grad(yhat, y, s: float = DEFAULT_SMOOTH, w=None):
    """Mean of T(yhat, y) and T(1 - yhat, 1 - y), with gradient w.r.t. yhat."""
    yhat, y = _pair(yhat, y)
    w = _weights_like(w, y.shape)
    t, g = _tanimoto_and_grad(yhat, y, w, s)
    tc, gc = _tanimoto_and_grad(1.0 - yhat, 1.0 - y, w, s)
    return 0.5 * (t + tc), 0.5 * (g - gc)


def tanimoto_complement(yhat, y, s: float = DEFAULT_SMOOTH, w=None) -> float:
    return float(tanimoto_complement_and_grad(yhat, y, s, w)[0])


def tanimoto_loss(yhat, y, s: float = DEFAULT_SMOOTH) -> float:
    return 1.0 - tanimoto_complement(yhat, y, s)


def weighted_tanimoto_loss_and_grad(yhat, y, w, s: float = DEFAULT_SMOOTH,
                                    lung_only: bool = False):
    """
    1 - weighted Tanimoto-with-complement, averaged over class channels.

    Args:
        yhat: Predictions; either the same shape as ``w`` (one map) or with
            a trailing class axis [..., C]
        y: Binary truth shaped like ``yhat``
        w: Per-pixel weights (WeightMap) shaped like one class map
        s: Smoothing scalar
        lung_only: Weight only class channel 0; other channels use w = 1

    Returns:
        (loss, gradient shaped like yhat)
    """
    yhat, y = _pair(yhat, y)
    w = np.asarray(w, dtype=np.float64)
    if yhat.shape == w.shape:
        value, grad = tanimoto_complement_and_grad(yhat, y, s, w)
        return 1.0 - value, -grad
    if yhat.shape[:-1] != w.shape:
        raise ShapeError(f"weight map {w.shape} does not match class maps {yhat.shape}")
    _weights_like(w, w.shape)
    n_classes = yhat.shape[-1]
    total, grad = 0.0, np.empty_like(yhat)
    for c in range(n_classes):
        wc = w if (c == 0 or not lung_only) else np.ones_like(w)
        value, g = tanimoto_complement_and_grad(yhat[..., c], y[..., c], s, wc)
        total += value
        grad[..., c] = -g / n_classes
    return 1.0 - total / n_classes, grad


def weighted_tanimoto_loss(yhat, y, w, s: float = DEFAULT_SMOOTH, lung_only: bool = False) -> float:
    return float(weighted_tanimoto_loss_and_grad(yhat, y, w, s, lung_only)[0])


def mask_boundary(mask) -> np.ndarray:
    """Foreground pixels with a 4-connected background neighbour (the frame edge does not count)."""
    mask = np.asarray(mask) > 0.5
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1),
                                    border_value=1)
    return mask & ~eroded


def contour_weights(mask, w0: float = DEFAULT_W0, sigma_px: float = DEFAULT_SIGMA_PX) -> np.ndarray:
    """
    Raised-border weights 1 + w0 * exp(-d^2 / (2 sigma^2)).

    ``d`` is the Euclidean distance to the nearest boundary pixel of the
    binary mask. A mask with no boundary yields all ones.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"contour_weights expects a 2D mask, got {mask.shape}")
    boundary = mask_boundary(mask)
    if not boundary.any():
        return np.ones(mask.shape)
    d = ndimage.distance_transform_edt(~boundary)
    return 1.0 + w0 * np.exp(-(d ** 2) / (2.0 * sigma_px ** 2))


def class_weights(labels, n_classes: int = 2) -> np.ndarray:
    """Inverse-frequency weights B / (n_classes * n_c); absent classes get 0."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    weights = np.zeros(n_classes)
    present = counts > 0
    weights[present] = labels.size / (n_classes * counts[present])
    return weights


def weighted_cross_entropy_and_grad(probs, labels, weights, counter: Optional[Counter] = None):
    """
    -(1/B) sum_i w[y_i] log p[i, y_i] and its gradient w.r.t. ``probs``.

    Probabilities below 1e-12 at the true class are clamped; each clamp is
    counted in ``counter["clamped"]`` and logged.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    weights = np.asarray(weights, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} disagree")
    B = probs.shape[0]
    rows = np.arange(B)
    p_true = probs[rows, labels]
    clamped = p_true < PROB_FLOOR
    if clamped.any():
        n = int(clamped.sum())
        if counter is not None:
            counter["clamped"] += n
        logger.warning("Clamped %d true-class probabilities at %g", n, PROB_FLOOR)
    p_safe = np.maximum(p_true, PROB_FLOOR)
    w = weights[labels]
    value = -np.sum(w * np.log(p_safe)) / B
    grad = np.zeros_like(probs)
    grad[rows, labels] = np.where(clamped, 0.0, -w / (B * p_safe))
    return float(value), grad


def weighted_cross_entropy(probs, labels, weights, counter: Optional[Counter] = None) -> float:
    return weighted_cross_entropy_and_grad(probs, labels, weights, counter)[0]

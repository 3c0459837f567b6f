"""
Dense tensor helpers

Tensors are plain numpy arrays: float64 for real data and complex128 for
complex data, always row-major. This module holds the 2D Fourier transforms,
periodic convolution, modulus and decimation used by the scattering front
end, plus the shape checks every other module relies on.
"""

from typing import Sequence

import numpy as np
import scipy.fft

from .config import Config
from .errors import NumericalError, ParameterError, ShapeError


def as_real(t) -> np.ndarray:
    """Return ``t`` as a float64 array."""
    return np.asarray(t, dtype=np.float64)


def check_nonempty(t: np.ndarray, name: str = "tensor"):
    """Raise ShapeError for arrays with a zero extent."""
    if t.ndim == 0 or t.size == 0:
        raise ShapeError(f"{name} is empty (shape {t.shape})")


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands"):
    """Raise ShapeError unless ``a`` and ``b`` have equal shapes."""
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def check_finite(t: np.ndarray, name: str = "tensor"):
    """Raise NumericalError when ``t`` holds NaN or Inf."""
    if not np.all(np.isfinite(t)):
        raise NumericalError(f"{name} contains NaN or Inf")


def fft2(t, axes: Sequence[int] = (0, 1)) -> np.ndarray:
    """
    Unnormalized forward 2D DFT over ``axes`` (any extents, not only powers of two).

    Args:
        t: Real or complex array with at least two dimensions
        axes: The two spatial axes

    Returns:
        complex128 array of the same shape
    """
    t = np.asarray(t)
    check_nonempty(t)
    return scipy.fft.fft2(t.astype(np.complex128, copy=False), axes=axes,
                          workers=Config.threads())


def ifft2(t, axes: Sequence[int] = (0, 1)) -> np.ndarray:
    """Inverse of :func:`fft2` (carries the 1/(H·W) factor)."""
    t = np.asarray(t)
    check_nonempty(t)
    return scipy.fft.ifft2(t.astype(np.complex128, copy=False), axes=axes,
                           workers=Config.threads())


def conv2_periodic(x, kernel_hat) -> np.ndarray:
    """
    Circular convolution of ``x`` with a kernel given in the Fourier domain.

    Leading axes are the spatial ones; trailing axes of ``x`` are batched
    when ``kernel_hat`` is exactly 2D.

    Returns:
        Complex array when the kernel is complex, real otherwise
    """
    x = np.asarray(x)
    kernel_hat = np.asarray(kernel_hat)
    check_nonempty(x, "x")
    if x.shape[:2] != kernel_hat.shape[:2] or (
            kernel_hat.ndim > 2 and x.shape != kernel_hat.shape):
        raise ShapeError(f"conv2_periodic shape mismatch: {x.shape} vs {kernel_hat.shape}")
    k = kernel_hat.reshape(kernel_hat.shape[:2] + (1,) * (x.ndim - 2)) \
        if kernel_hat.ndim == 2 else kernel_hat
    out = ifft2(fft2(x) * k)
    if np.iscomplexobj(kernel_hat) or np.iscomplexobj(x):
        return out
    return out.real


def modulus(t) -> np.ndarray:
    """Pointwise magnitude; real input gives its absolute value."""
    return np.abs(np.asarray(t)).astype(np.float64, copy=False)


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def downsample2d(t, factor: int) -> np.ndarray:
    """
    Keep every ``factor``-th sample along the two leading axes, starting at 0.

    Output extents are ``ceil(H / factor)`` and ``ceil(W / factor)``. Low-pass
    filtering is the caller's job.

    Raises:
        ParameterError: If ``factor`` is not a power of two
    """
    if not is_power_of_two(factor):
        raise ParameterError(f"downsample factor must be a power of two, got {factor}")
    t = np.asarray(t)
    check_nonempty(t)
    return t[::factor, ::factor]


def downsampled_extent(n: int, factor: int) -> int:
    """Length of an axis of ``n`` samples after :func:`downsample2d`."""
    return -(-n // factor)

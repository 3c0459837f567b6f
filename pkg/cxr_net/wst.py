"""
Wavelet Scattering Transform

Morlet filter-bank synthesis and the order 0/1/2 scattering transform that
forms the fixed (non-trainable) front end of the classifier. Filters are
built in the spatial domain, periodized over neighbouring tiles, and moved to
the Fourier domain once; every convolution afterwards is periodic and done at
full resolution, with a single 2^J decimation at the end.

Filter parameters:
    sigma_j = 0.8 * 2^j, xi_j = (3/4)pi / 2^j, slant = 4 / L,
    orientation theta * pi / L, low-pass sigma = 0.8 * 2^(J-1).
"""

import functools
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np

from .errors import ParameterError, ShapeError, ValidationError
from .ndtensor import as_real, downsample2d, fft2, ifft2

logger = logging.getLogger(__name__)

SIGMA0 = 0.8
XI0 = 3.0 * np.pi / 4.0
MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScatterConfig:
    """Scattering geometry: J scales, L orientations on an H x W grid."""
    J: int = 2
    L: int = 6
    H: int = 300
    W: int = 340

    def validate(self):
        if self.J < 1 or self.L < 1:
            raise ParameterError(f"J and L must be >= 1, got J={self.J}, L={self.L}")
        if self.H < 1 or self.W < 1:
            raise ParameterError(f"Image extents must be positive, got {self.H}x{self.W}")
        if 2 ** self.J > min(self.H, self.W):
            raise ParameterError(
                f"2^J = {2 ** self.J} exceeds the smallest image extent {min(self.H, self.W)}"
            )
        return self

    @property
    def factor(self) -> int:
        return 2 ** self.J

    @property
    def out_shape(self) -> Tuple[int, int]:
        f = self.factor
        return -(-self.H // f), -(-self.W // f)

    def with_shape(self, H: int, W: int) -> "ScatterConfig":
        return ScatterConfig(J=self.J, L=self.L, H=H, W=W)


class PathDescriptor(NamedTuple):
    """One scattering channel; unused fields are -1."""
    order: int
    j1: int = -1
    theta1: int = -1
    j2: int = -1
    theta2: int = -1


@dataclass
class FilterBank:
    """
    Fourier-domain filters for one ScatterConfig.

    Attributes:
        psi_hat: complex array [J, L, H, W]; psi_hat[j, theta] is one wavelet
        phi_hat: real array [H, W] with phi_hat[0, 0] == 1
        lp_max: maximum of the Littlewood-Paley function over the grid
        lp_min: its minimum over the grid
    """
    config: ScatterConfig
    psi_hat: np.ndarray
    phi_hat: np.ndarray
    lp_max: float
    lp_min: float

    @property
    def frame_bound(self) -> float:
        return float(np.sqrt(self.lp_max))


@dataclass
class ScatterOutput:
    """Scattering coefficients [h, w, C] with one descriptor per channel."""
    coeffs: np.ndarray
    path_index: List[PathDescriptor] = field(default_factory=list)


def channel_count(J: int, L: int) -> int:
    """Number of order 0, 1 and 2 channels with j2 > j1."""
    if J < 1 or L < 1:
        raise ParameterError(f"J and L must be >= 1, got J={J}, L={L}")
    return 1 + J * L + (J * (J - 1) * L * L) // 2


def path_index(J: int, L: int) -> List[PathDescriptor]:
    """Channel descriptors in output order."""
    paths = [PathDescriptor(0)]
    paths += [PathDescriptor(1, j1, t1) for j1 in range(J) for t1 in range(L)]
    paths += [
        PathDescriptor(2, j1, t1, j2, t2)
        for j1 in range(J)
        for t1 in range(L)
        for j2 in range(j1 + 1, J)
        for t2 in range(L)
    ]
    return paths


def _gabor_2d(H: int, W: int, sigma: float, theta: float, xi: float,
              slant: float = 1.0) -> np.ndarray:
    """Periodized spatial Gabor filter with an elliptical Gaussian envelope."""
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    R_inv = R.T
    D = np.array([[1.0, 0.0], [0.0, slant * slant]])
    curv = R @ D @ R_inv / (2.0 * sigma * sigma)

    gab = np.zeros((H, W), np.complex128)
    for ex in (-2, -1, 0, 1):
        for ey in (-2, -1, 0, 1):
            xx, yy = np.mgrid[ex * H:H + ex * H, ey * W:W + ey * W]
            arg = -(curv[0, 0] * xx * xx + (curv[0, 1] + curv[1, 0]) * xx * yy
                    + curv[1, 1] * yy * yy) \
                + 1j * (xx * xi * np.cos(theta) + yy * xi * np.sin(theta))
            gab += np.exp(arg)
    return gab / (2.0 * np.pi * sigma * sigma / slant)


def _morlet_2d(H: int, W: int, sigma: float, theta: float, xi: float,
               slant: float) -> np.ndarray:
    """Gabor filter minus a Gaussian so that the spatial sum is zero."""
    wv = _gabor_2d(H, W, sigma, theta, xi, slant)
    envelope = _gabor_2d(H, W, sigma, theta, 0.0, slant)
    K = np.sum(wv) / np.sum(envelope)
    return wv - K * envelope


def _reflect_frequencies(a: np.ndarray) -> np.ndarray:
    """a(-omega) on the periodic DFT grid (last two axes)."""
    return np.roll(np.flip(a, axis=(-2, -1)), shift=1, axis=(-2, -1))


def littlewood_paley(psi_hat: np.ndarray, phi_hat: np.ndarray) -> np.ndarray:
    """
    |phi(w)|^2 + 1/2 * sum over wavelets of (|psi(w)|^2 + |psi(-w)|^2).

    Orientations only cover [0, pi), so the wavelet energy is symmetrized
    over +/- w; this is the frame function that bounds real inputs.
    """
    energy = np.abs(psi_hat) ** 2
    energy = energy.reshape((-1,) + phi_hat.shape).sum(axis=0)
    return np.abs(phi_hat) ** 2 + 0.5 * (energy + _reflect_frequencies(energy))


def build_filterbank(cfg: ScatterConfig) -> FilterBank:
    """
    Synthesize J*L Morlet wavelets and one Gaussian low-pass on the H x W grid.

    Wavelets are rescaled by one common factor so the Littlewood-Paley
    function never exceeds 1 (up to rounding).

    Raises:
        ParameterError: If 2^J exceeds min(H, W)
    """
    cfg.validate()
    J, L, H, W = cfg.J, cfg.L, cfg.H, cfg.W
    slant = 4.0 / L

    psi_hat = np.empty((J, L, H, W), np.complex128)
    for j in range(J):
        for theta in range(L):
            wavelet = _morlet_2d(H, W, sigma=SIGMA0 * 2 ** j, theta=theta * np.pi / L,
                                 xi=XI0 / 2 ** j, slant=slant)
            psi_hat[j, theta] = fft2(wavelet)
            psi_hat[j, theta, 0, 0] = 0.0

    phi = _gabor_2d(H, W, sigma=SIGMA0 * 2 ** (J - 1), theta=0.0, xi=0.0)
    phi_hat = fft2(phi).real
    phi_hat = phi_hat / phi_hat[0, 0]

    wavelet_lp = littlewood_paley(psi_hat, np.zeros_like(phi_hat))
    room = 1.0 - phi_hat ** 2
    support = wavelet_lp > 1e-12 * wavelet_lp.max()
    scale = min(1.0, float(np.min(room[support] / wavelet_lp[support])))
    psi_hat *= np.sqrt(scale)

    lp = littlewood_paley(psi_hat, phi_hat)
    bank = FilterBank(cfg, psi_hat, phi_hat, lp_max=float(lp.max()), lp_min=float(lp.min()))
    logger.debug("Filter bank J=%d L=%d %dx%d: wavelet scale %.4f, LP in [%.4g, %.4g]",
                 J, L, H, W, scale, bank.lp_min, bank.lp_max)
    return bank


@functools.lru_cache(maxsize=8)
def get_filterbank(cfg: ScatterConfig) -> FilterBank:
    """Cached :func:`build_filterbank`; banks are never mutated after construction."""
    return build_filterbank(cfg)


def _lowpass_decimate(u: np.ndarray, phi_hat: np.ndarray, factor: int) -> np.ndarray:
    """Average over the last two axes with phi and keep every factor-th sample."""
    averaged = ifft2(fft2(u, axes=(-2, -1)) * phi_hat, axes=(-2, -1)).real
    return averaged[..., ::factor, ::factor]


def scatter(x, fb: FilterBank, cfg: ScatterConfig) -> ScatterOutput:
    """
    Order 0, 1 and 2 scattering coefficients of one real image.

    Channel 0 is x * phi; order-1 channels are |x * psi_{j1,t1}| * phi; order-2
    channels are ||x * psi_{j1,t1}| * psi_{j2,t2}| * phi for j2 > j1. All
    results are decimated by 2^J.

    Returns:
        ScatterOutput with coeffs of shape [ceil(H/2^J), ceil(W/2^J), C]
    """
    x = as_real(x)
    if x.shape != (cfg.H, cfg.W):
        raise ShapeError(f"scatter expects a {cfg.H}x{cfg.W} image, got {x.shape}")
    if fb.config != cfg:
        raise ShapeError(f"filter bank built for {fb.config}, not {cfg}")
    J, L, f = cfg.J, cfg.L, cfg.factor
    phi_hat, psi_hat = fb.phi_hat, fb.psi_hat

    x_hat = fft2(x)
    s0 = downsample2d(ifft2(x_hat * phi_hat).real, f)

    u1 = np.abs(ifft2(x_hat[None, None] * psi_hat, axes=(-2, -1)))
    s1 = _lowpass_decimate(u1, phi_hat, f)

    u1_hat = fft2(u1, axes=(-2, -1))
    s2 = []
    for j1 in range(J):
        for t1 in range(L):
            for j2 in range(j1 + 1, J):
                u2 = np.abs(ifft2(u1_hat[j1, t1][None] * psi_hat[j2], axes=(-2, -1)))
                s2.append(_lowpass_decimate(u2, phi_hat, f))

    stack = [s0[None], s1.reshape((J * L,) + s0.shape)]
    if s2:
        stack.append(np.concatenate(s2, axis=0))
    coeffs = np.moveaxis(np.concatenate(stack, axis=0), 0, -1)
    return ScatterOutput(np.ascontiguousarray(coeffs), path_index(J, L))


def wst_block(x, float_mask, cfg: ScatterConfig, fb: FilterBank = None):
    """
    Scattering features with the decimated float mask appended, plus the binary mask.

    Args:
        x: Standardized image [H, W]
        float_mask: Lung probability mask [H, W] in [0, 1]
        cfg: Scattering configuration matching the image size
        fb: Filter bank; built (and cached) from ``cfg`` when omitted

    Returns:
        (features [h, w, C + 1], binary_mask [h, w, 1]) where the binary mask
        is the decimated float mask thresholded at >= 0.5

    Raises:
        ValidationError: If the mask leaves [0, 1]
    """
    x = as_real(x)
    float_mask = as_real(float_mask)
    if x.shape != float_mask.shape:
        raise ShapeError(f"image {x.shape} and mask {float_mask.shape} differ")
    if float_mask.size and (float_mask.min() < 0.0 or float_mask.max() > 1.0):
        raise ValidationError("float mask values must lie in [0, 1]")
    fb = fb if fb is not None else get_filterbank(cfg)
    coeffs = scatter(x, fb, cfg).coeffs
    mask_ds = downsample2d(float_mask, cfg.factor)
    features = np.concatenate([coeffs, mask_ds[..., None]], axis=-1)
    binary = (mask_ds >= MASK_THRESHOLD).astype(np.float64)[..., None]
    return features, binary

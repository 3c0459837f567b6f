"""
Synthetic chest-radiograph phantoms

Each phantom is a dark frame holding a body outline, two bright elliptical
lung fields with sinusoidal rib banding and a central heart ellipse.
Positive phantoms additionally carry 2-5 Gaussian ground-glass blobs placed
inside the lung fields. Every synthetic patient contributes 2-3 images that
share anatomy and label, so patient grouping is exercised.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..errors import ParameterError
from .augment import sample_rng
from .bundle import DatasetBundle
from .samples import NEGATIVE, POSITIVE, Sample, seg_truth_from_mask

logger = logging.getLogger(__name__)

MIN_SIZE = 32
IMAGES_PER_PATIENT = (2, 3)


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse in pixel coordinates."""
    row: float
    col: float
    r_row: float
    r_col: float

    def radius(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Normalized elliptical radius; 1 on the outline."""
        return np.sqrt(((rows - self.row) / self.r_row) ** 2 + ((cols - self.col) / self.r_col) ** 2)

    def contains(self, row: float, col: float) -> bool:
        return float(self.radius(np.array(row), np.array(col))) <= 1.0

    def coverage(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Soft membership in [0, 1] with a one-pixel ramp across the outline."""
        rho = self.radius(rows, cols)
        return np.clip((1.0 - rho) * min(self.r_row, self.r_col) + 0.5, 0.0, 1.0)


@dataclass
class Anatomy:
    """Per-patient geometry; blobs are set only for positive images."""
    lungs: Tuple[Ellipse, Ellipse]
    heart: Ellipse
    rib_frequency: float
    blobs: List[Tuple[float, float, float]] = field(default_factory=list)


class PhantomGenerator:
    """
    Deterministic phantom factory.

    Attributes:
        size: Side of the square images in pixels
        seed: Root seed; patient p draws from the Philox stream (seed, p)
    """

    def __init__(self, size: int, seed: int):
        if size < MIN_SIZE:
            raise ParameterError(f"phantom size {size} below minimum {MIN_SIZE}")
        self.size = size
        self.seed = seed
        self._rows, self._cols = np.indices((size, size), dtype=np.float64)

    def draw_anatomy(self, rng: np.random.Generator) -> Anatomy:
        s = self.size
        jitter = rng.uniform(-1.0, 1.0, size=6)
        r_row = s * (0.28 + 0.02 * jitter[0])
        r_col = s * (0.13 + 0.01 * jitter[1])
        row = s * (0.48 + 0.02 * jitter[2])
        gap = s * (0.20 + 0.01 * jitter[3])
        lungs = (Ellipse(row, s / 2 - gap, r_row, r_col), Ellipse(row, s / 2 + gap, r_row, r_col))
        heart = Ellipse(s * (0.58 + 0.02 * jitter[4]), s * 0.53, s * 0.14, s * (0.11 + 0.01 * jitter[5]))
        return Anatomy(lungs=lungs, heart=heart, rib_frequency=rng.uniform(5.0, 7.0))

    def lung_mask(self, anatomy: Anatomy) -> np.ndarray:
        left, right = (lung.coverage(self._rows, self._cols) for lung in anatomy.lungs)
        return np.maximum(left, right)

    def _draw_blobs(self, anatomy: Anatomy, rng: np.random.Generator) -> List[Tuple[float, float, float]]:
        blobs = []
        for _ in range(int(rng.integers(2, 6))):
            lung = anatomy.lungs[int(rng.integers(0, 2))]
            # uniform point in the inner 80% of the ellipse, polar sampling
            radius = 0.8 * np.sqrt(rng.uniform())
            angle = rng.uniform(0.0, 2.0 * np.pi)
            row = lung.row + radius * lung.r_row * np.sin(angle)
            col = lung.col + radius * lung.r_col * np.cos(angle)
            blobs.append((row, col, self.size * rng.uniform(0.04, 0.08)))
        return blobs

    def render(self, anatomy: Anatomy, positive: bool, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, Anatomy]:
        """Render one image; returns (image, float lung mask, anatomy with this image's blobs)."""
        rows, cols = self._rows, self._cols
        body = Ellipse(self.size * 0.5, self.size * 0.5, self.size * 0.47, self.size * 0.43)
        mask = self.lung_mask(anatomy)
        image = 0.08 + 0.27 * body.coverage(rows, cols)
        ribs = 1.0 + 0.08 * np.sin(2 * np.pi * anatomy.rib_frequency * rows / self.size
                                   + rng.uniform(0.0, 2.0 * np.pi))
        image = image + 0.40 * mask * ribs
        image = image + 0.15 * anatomy.heart.coverage(rows, cols) * (1.0 - 0.5 * mask)
        blobs = self._draw_blobs(anatomy, rng) if positive else []
        for row, col, sigma in blobs:
            g = np.exp(-((rows - row) ** 2 + (cols - col) ** 2) / (2.0 * sigma ** 2))
            image = image + 0.22 * g * mask
        image = image + rng.normal(0.0, 0.02, size=image.shape)
        drawn = Anatomy(anatomy.lungs, anatomy.heart, anatomy.rib_frequency, blobs)
        return np.clip(image, 0.0, 1.0), mask, drawn

    def generate(self, n: int, covid_fraction: float) -> List[Tuple[Sample, Anatomy]]:
        """
        Generate exactly ``round(n * covid_fraction)`` positive images.

        Args:
            n: Number of images
            covid_fraction: Fraction of positive images in [0, 1]

        Returns:
            List of (sample, anatomy) pairs in patient order
        """
        if n < 0:
            raise ParameterError(f"sample count must be non-negative, got {n}")
        if not 0.0 <= covid_fraction <= 1.0:
            raise ParameterError(f"covid fraction {covid_fraction} outside [0, 1]")
        n_pos = int(round(n * covid_fraction))
        out: List[Tuple[Sample, Anatomy]] = []
        patient = 0
        while len(out) < n:
            rng = sample_rng(self.seed, patient)
            positive = len(out) < n_pos
            remaining = (n_pos if positive else n) - len(out)
            n_images = min(int(rng.integers(IMAGES_PER_PATIENT[0], IMAGES_PER_PATIENT[1] + 1)), remaining)
            anatomy = self.draw_anatomy(rng)
            for k in range(n_images):
                image, mask, drawn = self.render(anatomy, positive, rng)
                sample = Sample(
                    id=f"p{patient:05d}_{k}",
                    image=image,
                    float_mask=mask,
                    seg_truth=seg_truth_from_mask(mask),
                    label=POSITIVE if positive else NEGATIVE,
                    group=f"p{patient:05d}",
                )
                out.append((sample, drawn))
            patient += 1
        logger.info("Generated %d phantoms (%d positive) from %d patients", n, n_pos, patient)
        return out


def synth_phantoms(n: int, size: int, covid_fraction: float, seed: int):
    """Synthetic DatasetBundle with standardization statistics over all images."""
    samples = [s for s, _ in PhantomGenerator(size, seed).generate(n, covid_fraction)]
    return DatasetBundle.from_samples(samples)

"""Sample container and label conventions."""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError, ValidationError

POSITIVE = "covid_pos"
NEGATIVE = "covid_neg"
LABELS = (POSITIVE, NEGATIVE)

# Softmax channel order of the classifier: 0 = Covid+, 1 = Covid-
CLASS_INDEX = {POSITIVE: 0, NEGATIVE: 1}


@dataclass
class Sample:
    """
    One radiograph with whatever annotations are available.

    Attributes:
        id: Sample identifier, unique within a bundle
        image: [H, W] grayscale in [0, 1] before standardization
        float_mask: [H, W] lung probability in [0, 1]
        seg_truth: [H, W, 2] binary lung / non-lung channels
        label: POSITIVE or NEGATIVE
        group: Patient group; images of one patient share it
        weight: Per-sample scalar weight
    """
    id: str
    image: np.ndarray
    float_mask: Optional[np.ndarray] = None
    seg_truth: Optional[np.ndarray] = None
    label: Optional[str] = None
    group: str = ""
    weight: float = 1.0

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 2:
            raise ShapeError(f"sample {self.id}: image must be 2D, got {self.image.shape}")
        if self.float_mask is not None:
            self.float_mask = np.asarray(self.float_mask, dtype=np.float64)
            if self.float_mask.shape != self.image.shape:
                raise ShapeError(f"sample {self.id}: mask {self.float_mask.shape} "
                                 f"does not match image {self.image.shape}")
        if self.seg_truth is not None:
            self.seg_truth = np.asarray(self.seg_truth, dtype=np.float64)
            if self.seg_truth.shape != self.image.shape + (2,):
                raise ShapeError(f"sample {self.id}: segmentation truth {self.seg_truth.shape} "
                                 f"does not match image {self.image.shape}")
        if self.label is not None and self.label not in LABELS:
            raise ValidationError(f"sample {self.id}: unknown label {self.label!r}")
        if not self.group:
            self.group = self.id

    @property
    def shape(self):
        return self.image.shape

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE

    @property
    def class_index(self) -> int:
        if self.label is None:
            raise ValidationError(f"sample {self.id} has no label")
        return CLASS_INDEX[self.label]

    def with_arrays(self, **arrays) -> "Sample":
        return replace(self, **arrays)


def seg_truth_from_mask(mask) -> np.ndarray:
    """Two complementary binary channels (lung, non-lung) from a mask."""
    lung = (np.asarray(mask, dtype=np.float64) >= 0.5).astype(np.float64)
    return np.stack([lung, 1.0 - lung], axis=-1)


def stack_images(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples]) if samples else np.zeros((0, 0, 0))


def class_labels(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.class_index for s in samples], dtype=int)


def positive_flags(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([1 if s.is_positive else 0 for s in samples], dtype=int)

"""
Lung segmentation network

A linear stack of CONV RES blocks at full resolution, a 1x1 projection to
two channels (lung, non-lung) and a per-pixel softmax. Trained with the
contour-weighted Tanimoto loss; Dice is the reported metric.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .blocks import conv_res_block
from .datapipe.preprocess import preprocess_for_segmentation, resize_mask
from .datapipe.samples import Sample
from .errors import ParameterError, ShapeError, ValidationError
from .losses import (
    DEFAULT_SIGMA_PX,
    DEFAULT_SMOOTH,
    DEFAULT_W0,
    contour_weights,
    dice_coeff,
    weighted_tanimoto_loss_and_grad,
)
from .metrics import SegReport, segmentation_report
from .nn.graph import ModelGraph
from .nn.layers import INFER, PointwiseConv2D, Softmax
from .trainer import TrainConfig, Trainer, TrainHistory, TrainingTask

logger = logging.getLogger(__name__)

LUNG, NON_LUNG = 0, 1
MIN_CLASSIFIER_EXTENT = 4


@dataclass(frozen=True)
class SegConfig:
    """Architecture and loss settings of the segmentation network."""
    n_blocks: int = 5
    kernels: Tuple[int, ...] = (3, 5, 7)
    dilations: Tuple[int, ...] = (1, 3, 5)
    filters: int = 16
    shortcut_filters: int = 48
    branch_depth: int = 3
    dropout: float = 0.1
    classes: int = 2
    smooth: float = DEFAULT_SMOOTH
    w0: float = DEFAULT_W0
    sigma_px: float = DEFAULT_SIGMA_PX
    lung_only_weights: bool = False

    def validate(self) -> "SegConfig":
        if self.n_blocks < 1 or self.branch_depth < 1:
            raise ParameterError("n_blocks and branch_depth must be positive")
        if len(self.kernels) != len(self.dilations) or not self.kernels:
            raise ParameterError("kernels and dilations need one entry per branch")
        if self.classes != 2:
            raise ParameterError(f"segmentation has exactly 2 classes, got {self.classes}")
        if self.shortcut_filters != len(self.kernels) * self.filters:
            raise ParameterError(
                f"shortcut filters {self.shortcut_filters} must equal "
                f"{len(self.kernels)} branches x {self.filters} filters"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout rate {self.dropout} outside [0, 1)")
        if self.smooth < 0 or self.w0 < 0 or self.sigma_px <= 0:
            raise ParameterError("smooth and w0 must be >= 0, sigma_px > 0")
        return self


def build_segnet(cfg: SegConfig = SegConfig(), seed: int = 0, name: str = "segnet") -> ModelGraph:
    """Input ``image`` [N, H, W, 1] to output ``probs`` [N, H, W, 2]."""
    cfg.validate()
    graph = ModelGraph(name, seed)
    x, channels = graph.input("image", 1), 1
    for b in range(cfg.n_blocks):
        x = conv_res_block(graph, f"block{b + 1}", x, channels, cfg.kernels, cfg.dilations,
                           cfg.filters, cfg.shortcut_filters, cfg.branch_depth, cfg.dropout)
        channels = cfg.shortcut_filters
    graph.add("classifier", PointwiseConv2D(channels, cfg.classes), x)
    graph.add("probs", Softmax(), "classifier")
    graph.set_outputs("probs")
    return graph


def segmentation_input(images, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    Resized, equalized [N, H, W, 1] network input from raw [N, H, W] or [H, W] images.

    ``shape`` is the working size; each image keeps its own size when omitted.
    """
    if isinstance(images, np.ndarray) and images.ndim == 2:
        images = images[None]
    return np.stack([preprocess_for_segmentation(im, shape or np.shape(im))
                     for im in images])[..., None]


class SegmentationTask(TrainingTask):
    """Contour-weighted Tanimoto loss on the two softmax channels."""

    metric_name = "dice"

    def __init__(self, cfg: SegConfig = SegConfig()):
        self.cfg = cfg

    def make_batch(self, samples: Sequence[Sample]):
        for s in samples:
            if s.seg_truth is None:
                raise ValidationError(f"sample {s.id} has no segmentation truth")
        truth = np.stack([s.seg_truth for s in samples])
        weights = np.stack([contour_weights(t[..., LUNG], self.cfg.w0, self.cfg.sigma_px)
                            for t in truth])
        return {"image": segmentation_input([s.image for s in samples])}, (truth, weights)

    def loss(self, outputs, targets):
        truth, weights = targets
        value, grad = weighted_tanimoto_loss_and_grad(
            outputs["probs"], truth, weights, self.cfg.smooth, self.cfg.lung_only_weights
        )
        return float(value), {"probs": grad}

    def metric(self, outputs, targets):
        probs = np.concatenate([o["probs"][..., LUNG].ravel() for o in outputs])
        truth = np.concatenate([t[0][..., LUNG].ravel() for t in targets])
        return dice_coeff(probs, truth, self.cfg.smooth)


def train_seg(graph: ModelGraph, train: Sequence[Sample], val: Sequence[Sample] = (),
              train_cfg: TrainConfig = TrainConfig(), seg_cfg: SegConfig = SegConfig(),
              verbose: bool = False) -> TrainHistory:
    """Train in place; the graph keeps the best-validation weights."""
    return Trainer(graph, SegmentationTask(seg_cfg), train_cfg, verbose).fit(train, val)


def predict_masks(graph: ModelGraph, images: Sequence[np.ndarray], batch_size: int = 8,
                  shape: Optional[Tuple[int, int]] = None) -> List[np.ndarray]:
    """
    Lung-channel probabilities, unthresholded, for equally or differently sized images.

    With a working ``shape`` every image is resized to it for the forward
    pass and its mask is resized back to the image's own size.
    """
    for image in images:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ShapeError(f"expected a 2D image, got {image.shape}")
        if min(shape or image.shape) < MIN_CLASSIFIER_EXTENT:
            logger.warning("Image %s is smaller than the classifier's minimum extent %d",
                           image.shape, MIN_CLASSIFIER_EXTENT)
    # group same-shaped images so they share forward passes
    by_shape = {}
    for i, image in enumerate(images):
        by_shape.setdefault(tuple(shape or np.shape(image)), []).append(i)
    out = [None] * len(images)
    for work_shape, indices in by_shape.items():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            inputs = segmentation_input([images[i] for i in chunk], work_shape)
            probs = graph.forward({"image": inputs}, INFER)
            for i, p in zip(chunk, probs["probs"]):
                out[i] = resize_mask(p[..., LUNG], np.shape(images[i]))
    return out


def predict_mask(graph: ModelGraph, image) -> np.ndarray:
    """Lung probability map [H, W] in [0, 1] for one raw image."""
    return predict_masks(graph, [image])[0]


def evaluate_segmentation(graph: ModelGraph, samples: Sequence[Sample], batch_size: int = 8) -> SegReport:
    """Dice, precision, recall and F1 of 0.5-thresholded masks against the lung truth."""
    missing = [s.id for s in samples if s.seg_truth is None]
    if missing:
        raise ValidationError(f"samples without segmentation truth: {missing[:5]}")
    predicted = predict_masks(graph, [s.image for s in samples], batch_size)
    return segmentation_report(np.concatenate([p.ravel() for p in predicted]),
                               np.concatenate([s.seg_truth[..., LUNG].ravel() for s in samples]))

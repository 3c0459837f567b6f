"""
Grad-CAM saliency

Gradients of a class score with respect to the masked two-channel final
feature map are taken by reverse-mode autodiff through the model graph.
Maps are rectified per class, differenced, upsampled to the input
resolution and blended onto the radiograph with a diverging colour ramp.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import matplotlib
import numpy as np
from scipy import ndimage

from .classifier import ClassifierModel
from .datapipe.imageio import save_image
from .errors import ShapeError
from .nn.layers import INFER

logger = logging.getLogger(__name__)

POSITIVE_CLASS, NEGATIVE_CLASS = 0, 1
OVERLAY_ALPHA = 0.5
RAMP_NAME = "coolwarm"


@dataclass
class SaliencyMap:
    """
    Grad-CAM maps of one image.

    Attributes:
        per_class: (Covid+ map, Covid- map) at the decimated resolution
        diff: Covid+ map minus Covid- map
        upsampled: (Covid+, Covid-, diff) at the input resolution
    """
    per_class: Tuple[np.ndarray, np.ndarray]
    diff: np.ndarray
    upsampled: Tuple[np.ndarray, np.ndarray, np.ndarray]


class GradCAM:
    """Grad-CAM over a member or ensemble ClassifierModel."""

    def __init__(self, model: ClassifierModel):
        self.model = model

    def __call__(self, image, float_mask, class_id: Optional[int] = None):
        """
        Returns:
            (map [h, w], class_id, probability of class_id)
        """
        graph = self.model.graph
        inputs = self.model.inputs_for([image], [float_mask])
        probs = graph.forward(inputs, INFER)["probs"][0]
        if class_id is None:
            class_id = int(np.argmax(probs))
        score = graph.value(self.model.score_node)
        seed = np.zeros_like(score)
        seed[0, class_id] = 1.0
        grads = graph.backward({self.model.score_node: seed})

        region = inputs["pool_map"][0, ..., 0] > 0
        cams = []
        for node in self.model.final_nodes:
            A = graph.value(node)[0, ..., class_id]
            dA = grads.nodes[node][0, ..., class_id]
            # gradient weight: spatial mean over the pooled region
            alpha = dA[region].mean()
            cams.append(np.maximum(alpha * A, 0.0))
        return np.mean(cams, axis=0), class_id, float(probs[class_id])


def gradcam(model: ClassifierModel, image, float_mask, class_index: int) -> np.ndarray:
    """Rectified Grad-CAM map [h, w] of ``class_index`` (0 = Covid+, 1 = Covid-)."""
    return GradCAM(model)(image, float_mask, class_index)[0]


def diff_map(map_pos, map_neg) -> np.ndarray:
    map_pos = np.asarray(map_pos, dtype=np.float64)
    map_neg = np.asarray(map_neg, dtype=np.float64)
    if map_pos.shape != map_neg.shape:
        raise ShapeError(f"maps differ in shape: {map_pos.shape} vs {map_neg.shape}")
    return map_pos - map_neg


def upsample(map_ds, height: int, width: int) -> np.ndarray:
    """
    Bilinear upsampling of a decimated map to ``height`` x ``width``.

    Cell (i, j) sits at input pixel (i * fy, j * fx), matching the
    keep-every-f-th-sample decimation of the scattering front end.
    """
    map_ds = np.asarray(map_ds, dtype=np.float64)
    h, w = map_ds.shape
    fy = -(-height // h) if h > 1 else 1
    fx = -(-width // w) if w > 1 else 1
    rows = np.arange(height, dtype=np.float64) / fy
    cols = np.arange(width, dtype=np.float64) / fx
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    return ndimage.map_coordinates(map_ds, grid, order=1, mode="nearest")


def colour_ramp(n: int = 256) -> np.ndarray:
    """[n, 3] diverging ramp (blue, white, red) sampled from matplotlib's coolwarm."""
    return matplotlib.colormaps[RAMP_NAME](np.linspace(0.0, 1.0, n))[:, :3]


def upsample_overlay(map_ds, height: int, width: int, base_image, alpha: float = OVERLAY_ALPHA,
                     signed: bool = False) -> np.ndarray:
    """
    Blend a saliency map onto a grayscale image; returns RGB [H, W, 3] in [0, 1].

    Non-negative maps use the warm half of the ramp, signed maps the whole
    ramp centred on zero. Blend weight grows with |map|, so a zero map
    leaves the base image unchanged.
    """
    base = np.asarray(base_image, dtype=np.float64)
    if base.shape != (height, width):
        raise ShapeError(f"base image {base.shape} is not {height}x{width}")
    up = upsample(map_ds, height, width)
    peak = np.abs(up).max()
    magnitude = np.abs(up) / peak if peak > 0 else np.zeros_like(up)
    position = 0.5 + 0.5 * (up / peak if peak > 0 else up) if signed else 0.5 + 0.5 * magnitude
    ramp = colour_ramp()
    colours = ramp[np.clip(np.rint(position * 255), 0, 255).astype(int)]
    weight = (alpha * magnitude)[..., None]
    gray = np.repeat(np.clip(base, 0.0, 1.0)[..., None], 3, axis=-1)
    return (1.0 - weight) * gray + weight * colours


def saliency_maps(model: ClassifierModel, image, float_mask) -> SaliencyMap:
    """Both class maps, their difference and input-resolution copies."""
    cam = GradCAM(model)
    pos = cam(image, float_mask, POSITIVE_CLASS)[0]
    neg = cam(image, float_mask, NEGATIVE_CLASS)[0]
    diff = diff_map(pos, neg)
    H, W = np.shape(image)
    return SaliencyMap((pos, neg), diff, tuple(upsample(m, H, W) for m in (pos, neg, diff)))


def write_saliency(prefix, sal: SaliencyMap, base_image) -> Tuple[Path, ...]:
    """
    Write ``<prefix>_pos.pgm``, ``_neg.pgm``, ``_diff.pgm`` (16-bit) and ``_overlay.ppm``.

    Class maps are scaled by their joint maximum; the signed diff map is
    mapped from [-max, max] onto [0, 1].
    """
    pos, neg, diff = sal.upsampled
    peak = max(pos.max(), neg.max())
    scale = 1.0 / peak if peak > 0 else 0.0
    H, W = pos.shape
    paths = (
        save_image(pos * scale, f"{prefix}_pos.pgm"),
        save_image(neg * scale, f"{prefix}_neg.pgm"),
        save_image(0.5 + 0.5 * diff * scale, f"{prefix}_diff.pgm"),
        save_image(upsample_overlay(sal.diff, H, W, base_image, signed=True), f"{prefix}_overlay.ppm"),
    )
    logger.info("Wrote saliency maps for %s", prefix)
    return paths

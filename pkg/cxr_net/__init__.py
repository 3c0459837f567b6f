"""
CXR-Net: lung segmentation, scattering + attention COVID-19 classification
and Grad-CAM saliency for chest radiographs, on a small numpy autodiff engine.
"""

from .classifier import (
    ClassifierModel,
    ClfConfig,
    EnsembleModel,
    build_ensemble,
    build_member,
    ensemble_forward,
    load_ensemble,
    save_ensemble,
    train_clf,
)
from .errors import CXRNetError
from .metrics import EvalReport, evaluate
from .saliency import GradCAM, gradcam, upsample_overlay
from .segmentation import SegConfig, build_segnet, predict_mask, train_seg
from .trainer import TrainConfig
from .wst import ScatterConfig, scatter, wst_block

__version__ = "1.0.0"

__all__ = [
    "ClassifierModel", "ClfConfig", "EnsembleModel", "build_ensemble", "build_member",
    "ensemble_forward", "load_ensemble", "save_ensemble", "train_clf",
    "CXRNetError", "EvalReport", "evaluate",
    "GradCAM", "gradcam", "upsample_overlay",
    "SegConfig", "build_segnet", "predict_mask", "train_seg",
    "TrainConfig", "ScatterConfig", "scatter", "wst_block",
]

"""Data pipeline: image I/O, preprocessing, augmentation, folds, phantoms and bundles."""

from .augment import AffineWarp, AugmentConfig, augment, draw_warp, sample_rng
from .bundle import DatasetBundle, decode_bundle, encode_bundle, pack_bundle, unpack_bundle
from .folds import FoldPlan, plan_folds, plan_folds_arrays
from .imageio import decode_netpbm, encode_netpbm, load_image, save_image
from .loader import attach_masks, export_directory, load_directory, read_labels
from .phantoms import Anatomy, Ellipse, PhantomGenerator, synth_phantoms
from .preprocess import (
    TARGET_SHAPE,
    apply_standardization,
    hist_equalize,
    preprocess_for_classification,
    preprocess_for_segmentation,
    rescale_unit,
    resize_mask,
    resize_to,
    standardize,
)
from .samples import CLASS_INDEX, NEGATIVE, POSITIVE, Sample, seg_truth_from_mask

__all__ = [
    "AffineWarp", "AugmentConfig", "augment", "draw_warp", "sample_rng",
    "DatasetBundle", "decode_bundle", "encode_bundle", "pack_bundle", "unpack_bundle",
    "FoldPlan", "plan_folds", "plan_folds_arrays",
    "decode_netpbm", "encode_netpbm", "load_image", "save_image",
    "attach_masks", "export_directory", "load_directory", "read_labels",
    "Anatomy", "Ellipse", "PhantomGenerator", "synth_phantoms",
    "TARGET_SHAPE", "apply_standardization", "hist_equalize", "preprocess_for_classification",
    "preprocess_for_segmentation", "rescale_unit", "resize_mask", "resize_to", "standardize",
    "CLASS_INDEX", "NEGATIVE", "POSITIVE", "Sample", "seg_truth_from_mask",
]

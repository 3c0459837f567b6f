"""
Directory loader

A data directory holds ``<id>.pgm`` images, optional ``<id>_mask.pgm`` lung
masks and an optional ``labels.csv`` with columns ``id,label,group``.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..errors import FormatError, ValidationError
from ..fileio import atomic_write_text
from .imageio import load_image, save_image
from .preprocess import resize_mask
from .samples import Sample

logger = logging.getLogger(__name__)

MASK_SUFFIX = "_mask"
LABELS_FILE = "labels.csv"


def read_labels(path: Union[str, Path]) -> Dict[str, Tuple[Optional[str], str]]:
    """Map sample id to (label, group) from a labels CSV."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise FormatError(f"{path}: missing 'id' column")
        table = {}
        for row in reader:
            label = (row.get("label") or "").strip() or None
            table[row["id"].strip()] = (label, (row.get("group") or "").strip())
    return table


def load_directory(directory: Union[str, Path], require_masks: bool = False) -> List[Sample]:
    """
    Load every image of a directory in sorted id order.

    Args:
        directory: Directory to scan
        require_masks: Fail if an image has no ``<id>_mask.pgm``

    Returns:
        List of samples; masks are resized to their image when shapes differ
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    labels_path = directory / LABELS_FILE
    labels = read_labels(labels_path) if labels_path.exists() else {}

    samples = []
    for image_path in sorted(directory.glob("*.pgm")):
        sample_id = image_path.stem
        if sample_id.endswith(MASK_SUFFIX):
            continue
        image = load_image(image_path)
        if image.ndim != 2:
            raise FormatError(f"{image_path}: expected a grayscale image")
        mask_path = directory / f"{sample_id}{MASK_SUFFIX}.pgm"
        mask = None
        if mask_path.exists():
            mask = resize_mask(load_image(mask_path), image.shape)
        elif require_masks:
            raise ValidationError(f"{image_path}: no lung mask {mask_path.name}")
        label, group = labels.get(sample_id, (None, ""))
        samples.append(Sample(id=sample_id, image=image, float_mask=mask, label=label, group=group))
    logger.info("Loaded %d images from %s", len(samples), directory)
    return samples


def attach_masks(samples: Sequence[Sample], directory: Union[str, Path]) -> List[Sample]:
    """
    Replace each sample's float mask with ``<directory>/<id>_mask.pgm``.

    Raises:
        ValidationError: If any sample has no mask file
    """
    directory = Path(directory)
    out = []
    for s in samples:
        mask_path = directory / f"{s.id}{MASK_SUFFIX}.pgm"
        if not mask_path.exists():
            raise ValidationError(f"{s.id}: no lung mask {mask_path}")
        out.append(s.with_arrays(float_mask=resize_mask(load_image(mask_path), s.shape)))
    return out


def export_directory(samples: Sequence[Sample], directory: Union[str, Path]) -> Path:
    """Write samples as ``<id>.pgm``, ``<id>_mask.pgm`` and ``labels.csv`` (16-bit)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        save_image(s.image, directory / f"{s.id}.pgm")
        if s.float_mask is not None:
            save_image(s.float_mask, directory / f"{s.id}{MASK_SUFFIX}.pgm")
        rows.append(f"{s.id},{s.label or ''},{s.group}")
    atomic_write_text(directory / LABELS_FILE, "\n".join(["id,label,group"] + rows) + "\n")
    logger.info("Exported %d samples to %s", len(samples), directory)
    return directory

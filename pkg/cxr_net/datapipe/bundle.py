"""
CXB1 dataset bundles

Layout (all integers little-endian):

    b"CXB1" | u32 version | u32 header length | header JSON (UTF-8) | u32 CRC-32
    then for every section listed in the header:
    u64 payload length | float64 payload | u32 CRC-32 of the payload

The header holds counts, image shape, standardization statistics, class
weights, per-sample metadata and the section table.
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from ..errors import FormatError, IntegrityError, ShapeError
from ..fileio import atomic_write
from ..losses import class_weights as inverse_frequency_weights
from .preprocess import hist_equalize
from .samples import CLASS_INDEX, Sample

logger = logging.getLogger(__name__)

MAGIC = b"CXB1"
VERSION = 1


@dataclass
class DatasetBundle:
    """
    Samples plus the statistics needed to preprocess them consistently.

    ``mean`` and ``std`` standardize histogram-equalized images and come
    from the training portion only.
    """
    samples: List[Sample]
    mean: float = 0.0
    std: float = 1.0
    class_weights: List[float] = field(default_factory=lambda: [1.0, 1.0])

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def shape(self):
        return self.samples[0].shape if self.samples else None

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], train_index: Optional[Sequence[int]] = None
                     ) -> "DatasetBundle":
        """Build a bundle, fitting statistics on ``train_index`` (default: all samples)."""
        samples = list(samples)
        pool = samples if train_index is None else [samples[i] for i in train_index]
        mean, std, weights = 0.0, 1.0, [1.0, 1.0]
        if pool:
            equalized = np.stack([hist_equalize(s.image) for s in pool])
            mean, std = float(equalized.mean()), float(equalized.std())
            std = std if std > 0 else 1.0
            labelled = [CLASS_INDEX[s.label] for s in pool if s.label is not None]
            if labelled:
                weights = [float(w) for w in inverse_frequency_weights(labelled)]
        return cls(samples=samples, mean=mean, std=std, class_weights=weights)

    def refit(self, train_index: Sequence[int]) -> "DatasetBundle":
        """Same samples with statistics and class weights fitted on ``train_index`` only."""
        return DatasetBundle.from_samples(self.samples, train_index)

    def subset(self, indices: Sequence[int]) -> "DatasetBundle":
        return DatasetBundle([self.samples[i] for i in indices], self.mean, self.std,
                             list(self.class_weights))


def _sections(samples: Sequence[Sample]):
    """(name, stacked array, per-sample presence flags) for each tensor field."""
    out = [("images", np.stack([s.image for s in samples]), None)]
    for name in ("float_mask", "seg_truth"):
        present = [getattr(s, name) is not None for s in samples]
        arrays = [getattr(s, name) for s in samples if getattr(s, name) is not None]
        if arrays:
            out.append((name, np.stack(arrays), present))
    return out


def encode_bundle(bundle: DatasetBundle) -> bytes:
    samples = bundle.samples
    if samples and len({s.shape for s in samples}) != 1:
        raise ShapeError("all samples in a bundle must share one image shape")
    sections = _sections(samples) if samples else []
    header = {
        "count": len(samples),
        "shape": list(bundle.shape) if samples else None,
        "mean": bundle.mean,
        "std": bundle.std,
        "class_weights": list(bundle.class_weights),
        "ids": [s.id for s in samples],
        "groups": [s.group for s in samples],
        "labels": [s.label for s in samples],
        "weights": [s.weight for s in samples],
        "sections": [{"name": name, "shape": list(arr.shape), "present": present}
                     for name, arr, present in sections],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header_bytes)), header_bytes,
             struct.pack("<I", zlib.crc32(header_bytes))]
    for _, arr, _ in sections:
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        parts += [struct.pack("<Q", len(payload)), payload, struct.pack("<I", zlib.crc32(payload))]
    return b"".join(parts)


class _Reader:
    """Cursor over a byte string that reports truncation with offsets."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated: need {n} bytes, {len(self.data) - self.pos} left",
                              offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def checked(self, payload: bytes, what: str):
        start = self.pos
        (crc,) = self.unpack("<I")
        if crc != zlib.crc32(payload):
            raise IntegrityError(f"checksum mismatch in {what}", offset=start)


def decode_bundle(data: bytes) -> DatasetBundle:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatError("not a CXB1 bundle", offset=0)
    version, header_len = reader.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported bundle version {version}", offset=4)
    header_bytes = reader.take(header_len)
    reader.checked(header_bytes, "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=12) from exc

    count = header["count"]
    arrays = {}
    for section in header["sections"]:
        (length,) = reader.unpack("<Q")
        expected = int(np.prod(section["shape"])) * 8
        if length != expected:
            raise FormatError(f"section {section['name']} holds {length} bytes, expected {expected}",
                              offset=reader.pos - 8)
        payload = reader.take(length)
        reader.checked(payload, f"section {section['name']}")
        values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(section["shape"])
        present = section["present"] or [True] * count
        slots = iter(values)
        arrays[section["name"]] = [next(slots) if p else None for p in present]
    if reader.pos != len(data):
        raise FormatError(f"{len(data) - reader.pos} trailing bytes", offset=reader.pos)

    samples = []
    for i in range(count):
        samples.append(Sample(
            id=header["ids"][i],
            image=arrays["images"][i],
            float_mask=arrays.get("float_mask", [None] * count)[i],
            seg_truth=arrays.get("seg_truth", [None] * count)[i],
            label=header["labels"][i],
            group=header["groups"][i],
            weight=header["weights"][i],
        ))
    return DatasetBundle(samples=samples, mean=header["mean"], std=header["std"],
                         class_weights=header["class_weights"])


def pack_bundle(bundle: Union[DatasetBundle, Sequence[Sample]], path: Union[str, Path]) -> Path:
    """Write a bundle atomically; a bare sample list gets statistics fitted on all samples."""
    if not isinstance(bundle, DatasetBundle):
        bundle = DatasetBundle.from_samples(bundle)
    path = Path(path)
    atomic_write(path, encode_bundle(bundle))
    logger.info("Packed %d samples into %s", len(bundle), path)
    return path


def unpack_bundle(path: Union[str, Path]) -> DatasetBundle:
    path = Path(path)
    try:
        return decode_bundle(path.read_bytes())
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc.detail}", offset=exc.offset) from exc

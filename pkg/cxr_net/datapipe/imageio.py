"""
Netpbm image I/O

Reads PGM (P2 plain / P5 raw, 8- or 16-bit) and PPM (P3 / P6) into float
arrays scaled to [0, 1]; writes raw P5 / P6. Raw 16-bit samples are
big-endian as the netpbm format requires.
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..errors import FormatError, ShapeError
from ..fileio import atomic_write

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}
_WHITESPACE = b" \t\r\n\x0b\x0c"


def _read_header(data: bytes) -> Tuple[bytes, List[int], int]:
    """Return (magic, [width, height, maxval], offset of the first raster byte)."""
    if len(data) < 2 or data[:2] not in _CHANNELS:
        raise FormatError(f"unsupported magic {data[:2]!r}", offset=0)
    magic, pos, fields = data[:2], 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos] in _WHITESPACE:
            pos += 1
        if pos >= len(data):
            raise FormatError("header ended before width, height and maxval", offset=pos)
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE + b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"expected an integer, found {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(data) and magic in (b"P5", b"P6"):
        raise FormatError("missing raster after header", offset=pos)
    # exactly one whitespace byte separates the header from a raw raster
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid extent {width}x{height}", offset=pos)
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval {maxval} outside 1..65535", offset=pos)
    return magic, fields, pos


def decode_netpbm(data: bytes) -> np.ndarray:
    """Decode PGM/PPM bytes into float64 [H, W] or [H, W, 3] in [0, 1]."""
    magic, (width, height, maxval), pos = _read_header(data)
    channels = _CHANNELS[magic]
    count = width * height * channels
    if magic in (b"P2", b"P3"):
        tokens = data[pos:].split()
        if len(tokens) < count:
            raise FormatError(f"truncated payload: missing {count - len(tokens)} samples",
                              offset=len(data))
        try:
            values = np.array([int(t) for t in tokens[:count]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"non-integer sample: {exc}", offset=pos) from exc
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        needed = count * dtype.itemsize
        available = len(data) - pos
        if available < needed:
            raise FormatError(f"truncated payload: missing {needed - available} bytes",
                              offset=len(data))
        values = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    if np.any(values > maxval):
        raise FormatError(f"sample exceeds maxval {maxval}", offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return values.reshape(shape) / maxval


def encode_netpbm(image, bits: int = 16) -> bytes:
    """Encode a [H, W] (P5) or [H, W, 3] (P6) array in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ShapeError(f"cannot write image of shape {image.shape}")
    if bits not in (8, 16):
        raise ShapeError(f"bit depth must be 8 or 16, got {bits}")
    maxval = 255 if bits == 8 else 65535
    dtype = np.dtype("u1") if bits == 8 else np.dtype(">u2")
    raster = np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(dtype)
    header = b"%s\n%d %d\n%d\n" % (magic, image.shape[1], image.shape[0], maxval)
    return header + raster.tobytes()


def load_image(path: PathLike) -> np.ndarray:
    path = Path(path)
    try:
        return decode_netpbm(path.read_bytes())
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc.detail}", offset=exc.offset) from exc


def save_image(image, path: PathLike, bits: int = 16) -> Path:
    """Write an image atomically; masks and saliency maps use 16 bits."""
    path = Path(path)
    atomic_write(path, encode_netpbm(image, bits))
    logger.debug("Wrote %s", path)
    return path

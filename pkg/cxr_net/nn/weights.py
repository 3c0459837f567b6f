"""
CXWT weight files.

Layout (little-endian): magic ``b"CXWT"``, u32 version, then one record per
tensor until end of file: u32 name length, UTF-8 name, u32 rank, rank x u64
extents, float64 payload.
"""

import io
import struct
from typing import Dict

import numpy as np

from ..errors import FormatError, ShapeError
from ..fileio import atomic_write
from .graph import ModelGraph

MAGIC = b"CXWT"
VERSION = 1


def encode_weights(weights: Dict[str, np.ndarray]) -> bytes:
    """Serialize named tensors in sorted name order."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    for name in sorted(weights):
        arr = np.ascontiguousarray(weights[name], dtype="<f8")
        encoded = name.encode("utf-8")
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(arr.tobytes())
    return out.getvalue()


def decode_weights(data: bytes) -> Dict[str, np.ndarray]:
    """Parse a CXWT blob into named float64 arrays."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a CXWT weight file (bad magic)", 0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CXWT version {version}", 4)

    weights: Dict[str, np.ndarray] = {}
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated record: need {pos + n - len(data)} more bytes", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", pos - name_len)
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = take(8 * count)
        weights[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return weights


def save_weights(graph: ModelGraph, path: str):
    """Write every stored tensor of ``graph`` (running statistics included)."""
    atomic_write(path, encode_weights(graph.get_weights()))


def load_weights(graph: ModelGraph, path: str):
    """
    Load a CXWT file into ``graph`` in place.

    Raises:
        FormatError: On a corrupt or truncated file
        ShapeError: When names or shapes differ from the graph's; the message
            lists the offending names
    """
    with open(path, "rb") as f:
        weights = decode_weights(f.read())
    missing = sorted(set(graph.params) - set(weights))
    if missing:
        raise ShapeError(f"{path}: missing tensor(s) {', '.join(missing)}")
    unexpected = sorted(set(weights) - set(graph.params))
    if unexpected:
        raise ShapeError(f"{path}: unexpected tensor(s) {', '.join(unexpected)}")
    graph.set_weights(weights)

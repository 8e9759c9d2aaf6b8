"""VSPT tensor dump format.

Layout: magic ``b"VSPT"``, u8 version (1), u8 dtype (0 = f32, 1 = f64),
u8 rank, ``rank`` little-endian u32 extents, then the row-major
little-endian payload.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"VSPT"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class VsptError(ValueError):
    pass


def write_vspt(fh: BinaryIO, array) -> None:
    arr = np.asarray(getattr(array, "data", array))
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise VsptError(f"unsupported dtype {arr.dtype}; VSPT stores float32 or float64")
    if arr.ndim > 255:
        raise VsptError("rank exceeds 255")
    fh.write(MAGIC)
    fh.write(struct.pack("<BBB", VERSION, _CODES[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_vspt(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise VsptError(f"bad magic {magic!r}")
    head = fh.read(3)
    if len(head) != 3:
        raise VsptError("truncated header")
    version, code, rank = struct.unpack("<BBB", head)
    if version != VERSION:
        raise VsptError(f"unsupported VSPT version {version}")
    if code not in _DTYPES:
        raise VsptError(f"unknown dtype code {code}")
    raw = fh.read(4 * rank)
    if len(raw) != 4 * rank:
        raise VsptError("truncated extents")
    shape = struct.unpack(f"<{rank}I", raw)
    dt = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise VsptError(f"truncated payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def dumps(array) -> bytes:
    buf = io.BytesIO()
    write_vspt(buf, array)
    return buf.getvalue()


def loads(blob: bytes) -> np.ndarray:
    return read_vspt(io.BytesIO(blob))


def save(path, array) -> None:
    with open(Path(path), "wb") as fh:
        write_vspt(fh, array)


def load(path) -> np.ndarray:
    with open(Path(path), "rb") as fh:
        return read_vspt(fh)

"""Flat binary tensor container used by the command-line tools.

Layout (all integers little-endian):

    magic   4 bytes  b"PQT1"
    dtype   u8       0 = float64, 1 = int64
    rank    u8
    extents rank x u64
    payload row-major element bytes, little-endian
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import TensorFormatError

MAGIC = b"PQT1"
_DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_TAG_FOR_KIND = {"f": 0, "i": 1}


def write_tensor(path: Union[str, Path], arr: np.ndarray) -> None:
    """Writes an array as float64 or int64 depending on its kind."""
    arr = np.asarray(arr)
    if arr.dtype.kind not in _TAG_FOR_KIND:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}; only float and int tensors")
    tag = _TAG_FOR_KIND[arr.dtype.kind]
    out = arr.astype(_DTYPE_TAGS[tag], copy=False)
    header = MAGIC + struct.pack("<BB", tag, out.ndim)
    header += struct.pack(f"<{out.ndim}Q", *out.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(out).tobytes())


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != MAGIC:
        raise TensorFormatError(f"{path}: missing PQT1 magic")
    tag, rank = struct.unpack_from("<BB", data, 4)
    if tag not in _DTYPE_TAGS:
        raise TensorFormatError(f"{path}: unknown dtype tag {tag}")
    offset = 6
    if len(data) < offset + 8 * rank:
        raise TensorFormatError(f"{path}: truncated extent list")
    shape = struct.unpack_from(f"<{rank}Q", data, offset)
    offset += 8 * rank
    dtype = _DTYPE_TAGS[tag]
    count = 1
    for extent in shape:
        if extent == 0:
            raise TensorFormatError(f"{path}: zero extent in shape {shape}")
        count *= extent
    expected = offset + count * dtype.itemsize
    if len(data) != expected:
        raise TensorFormatError(
            f"{path}: payload size {len(data) - offset} does not match shape {shape}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="))

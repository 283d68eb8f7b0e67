"""Binary tensor records.

Layout (little-endian)::

    b"FDT1" | u8 dtype code | u32 rank | rank x u64 extents | raw row-major data

dtype codes: 1 float32, 2 float64, 3 int64, 4 uint8, 5 uint16.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FDT1"
_CODES = {1: "<f4", 2: "<f8", 3: "<i8", 4: "u1", 5: "<u2"}
_BY_DTYPE = {np.dtype(v).newbyteorder("<"): k for k, v in _CODES.items()}


class TensorFormatError(ValueError):
    pass


def write_tensor(fh, arr) -> None:
    arr = np.asarray(arr)
    code = _BY_DTYPE.get(arr.dtype.newbyteorder("<"))
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<BI", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())


def _read_exact(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise TensorFormatError("truncated tensor record")
    return b


def read_tensor(fh) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise TensorFormatError("bad tensor magic")
    code, rank = struct.unpack("<BI", _read_exact(fh, 5))
    if code not in _CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    dt = np.dtype(_CODES[code])
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, count * dt.itemsize), dtype=dt)
    return data.reshape(shape).astype(dt.newbyteorder("="))

"""Grayscale image files: binary PGM (8/16-bit, hand-parsed) and PNG via Pillow."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return (pixels as uint8/uint16 array, bit depth)."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (P5)")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = fields
    if not (0 < maxval < 65536):
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    dt = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    raster = data[pos:pos + w * h * dt.itemsize]
    if len(raster) != w * h * dt.itemsize:
        raise ImageFormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=dt).reshape(h, w)
    return arr.astype(np.uint8 if dt.itemsize == 1 else np.uint16), 8 if dt.itemsize == 1 else 16


def write_pgm(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype not in (np.uint8, np.uint16):
        raise ImageFormatError("write_pgm needs a 2-D uint8 or uint16 array")
    maxval = 255 if arr.dtype == np.uint8 else 65535
    h, w = arr.shape
    body = arr.astype(">u2").tobytes() if arr.dtype == np.uint16 else arr.tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def read_png(path) -> tuple[np.ndarray, int]:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8), 8
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im)
            if arr.min() < 0 or arr.max() > 65535:
                raise ImageFormatError(f"{path}: values outside 16-bit range")
            return arr.astype(np.uint16), 16
        raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode} (need 8/16-bit grayscale)")


def read_image(path) -> tuple[np.ndarray, int]:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise ImageFormatError(f"{path}: unsupported extension {suffix}")


def to_unit_range(arr: np.ndarray, bits: int) -> np.ndarray:
    """Integer pixels to [-1, 1]."""
    return arr.astype(np.float64) / (2 ** bits - 1) * 2.0 - 1.0


def from_unit_range(x, bits: int = 16) -> np.ndarray:
    top = 2 ** bits - 1
    q = np.rint((np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0 * top)
    return q.astype(np.uint16 if bits == 16 else np.uint8)


def resize_bilinear(x: np.ndarray, size: int) -> np.ndarray:
    from PIL import Image

    if x.shape == (size, size):
        return x
    im = Image.fromarray(np.asarray(x, dtype=np.float32), mode="F")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float64)

"""Grayscale image files: 8/16-bit PNG and PGM, plus the lossless SSIF float format.

SSIF layout: ``b"SSIF"``, little-endian u32 width, u32 height, then
``width * height`` little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageFormatError, ParameterError

SSIF_MAGIC = b"SSIF"


def read_ssif(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SSIF_MAGIC or len(raw) < 12:
        raise ImageFormatError(f"{path}: not an SSIF file")
    w, h = struct.unpack("<II", raw[4:12])
    data = np.frombuffer(raw[12:], dtype="<f4")
    if data.size != w * h:
        raise ImageFormatError(f"{path}: expected {w * h} values, found {data.size}")
    return data.reshape(h, w).astype(np.float64)


def write_ssif(path, img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ParameterError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(SSIF_MAGIC + struct.pack("<II", w, h) + img.astype("<f4").tobytes())


def read_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".ssif":
        return read_ssif(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            return a / 65535.0
        if im.mode not in ("L", "1"):
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_image(path, img, bits: int | None = None):
    """Write ``img`` (values in [0, 1]); ``.ssif`` is lossless, PNG/PGM are quantized.

    ``bits`` selects 8 or 16-bit output for PNG/PGM and defaults to 16.
    """
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if path.suffix.lower() == ".ssif":
        write_ssif(path, img)
        return
    bits = 16 if bits is None else bits
    if bits not in (8, 16):
        raise ParameterError(f"bits must be 8 or 16, got {bits}")
    clipped = np.clip(img, 0.0, 1.0)
    if bits == 8:
        im = Image.fromarray(np.rint(clipped * 255.0).astype(np.uint8))
    else:
        im = Image.fromarray(np.rint(clipped * 65535.0).astype(np.uint16))
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else None
    im.save(path, format=fmt)

"""Image validation and binary PPM (P6, 8-bit) input/output."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeMismatchError


def check_image(img: np.ndarray, min_side: int = 1) -> np.ndarray:
    """Validate an H x W x 3 image with finite values in [0, 1] and return it as float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ShapeMismatchError(f"expected H x W x 3 image, got shape {a.shape}")
    if a.shape[0] < min_side or a.shape[1] < min_side:
        raise ShapeMismatchError(f"image {a.shape[:2]} smaller than {min_side} pixels")
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0:
        raise DataError("image values must be finite and within [0, 1]")
    return a


_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise DataError(f"{path}: not a binary P6 PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 256:
        raise DataError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    body = data[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise DataError(f"{path}: truncated pixel data")
    px = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return px.astype(np.float64) / maxval


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    px = to_uint8(check_image(img))
    h, w, _ = px.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + px.tobytes())

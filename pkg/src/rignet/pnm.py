"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255."""
from __future__ import annotations

import os
from typing import Tuple

import numpy as np

from .errors import FormatError


def encode_ppm(image: np.ndarray) -> bytes:
    """(3, h, w) or (1, 3, h, w) floats in [0, 1] -> P6 bytes."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {img.shape[0]}")
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must be (3, h, w), got shape {img.shape}")
    if not np.isfinite(img).all() or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    _, h, w = img.shape
    raster = np.rint(img * 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raster.tobytes()


def encode_pgm(labels: np.ndarray) -> bytes:
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() > 255):
        raise ValueError("label values must lie in [0, 255]")
    h, w = lab.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + lab.astype(np.uint8).tobytes()


def _parse(data: bytes, magic: bytes) -> Tuple[int, int, int, bytes]:
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic!r}, got {data[:2]!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError("truncated header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("truncated header comment")
            pos = end + 1
        else:
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise FormatError(f"non-numeric header field at byte {start}")
            fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after header")
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"bad dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    return w, h, maxval, data[pos + 1 :]


def decode_ppm(data: bytes) -> np.ndarray:
    w, h, _, raster = _parse(data, b"P6")
    need = w * h * 3
    if len(raster) < need:
        raise FormatError(f"short raster: {len(raster)} of {need} bytes")
    px = np.frombuffer(raster[:need], dtype=np.uint8).reshape(h, w, 3)
    return px.transpose(2, 0, 1).astype(np.float64) / 255.0


def decode_pgm(data: bytes) -> np.ndarray:
    w, h, _, raster = _parse(data, b"P5")
    need = w * h
    if len(raster) < need:
        raise FormatError(f"short raster: {len(raster)} of {need} bytes")
    return np.frombuffer(raster[:need], dtype=np.uint8).reshape(h, w).astype(np.int64)


def save_ppm(path: os.PathLike, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


def load_ppm(path: os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def save_pgm(path: os.PathLike, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(labels))


def load_pgm(path: os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_pgm(f.read())

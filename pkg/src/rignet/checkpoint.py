"""RIGC checkpoint container.

Layout (little-endian)::

    b"RIGC" | u32 version=1 | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | float64 payload
"""
from __future__ import annotations

import os
import struct
from typing import Dict, Mapping

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = b"RIGC"
VERSION = 1


def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"entry {name!r} does not fit the container")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"checkpoint truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out: Dict[str, np.ndarray] = {}
    for k in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"entry {k} name length"))
        name = take(nlen, f"entry {k} name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        n = int(np.prod(dims)) if rank else 1
        payload = take(8 * n, f"{name} payload")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after checkpoint entries")
    return out


def save_checkpoint(params: Mapping[str, Tensor], path: os.PathLike) -> None:
    arrays = {name: t.data if isinstance(t, Tensor) else t for name, t in params.items()}
    with open(path, "wb") as f:
        f.write(encode_checkpoint(arrays))


def load_checkpoint(path: os.PathLike) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def assign(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into ``params``; names and shapes must match exactly."""
    missing = [n for n in params if n not in arrays]
    if missing:
        raise ValueError(f"checkpoint lacks parameter {missing[0]!r}")
    extra = [n for n in arrays if n not in params]
    if extra:
        raise ValueError(f"checkpoint has unexpected parameter {extra[0]!r}")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise ValueError(
                f"parameter {name!r}: checkpoint shape {arrays[name].shape} != model shape {t.shape}"
            )
    for name, t in params.items():
        t.data = arrays[name].copy()

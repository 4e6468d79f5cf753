"""Synthetic segmentation task where the class sits in a small distal marker.

Every object shape is filled with the same gray noise texture regardless of
its class; the only class evidence is a 3x3 colored marker stamped somewhere
inside the shape.  Labeling the rest of the shape correctly therefore needs
context carried across the shape.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import binary_dilation

from .pnm import load_pgm, load_ppm, save_pgm, save_ppm

MANIFEST_NAME = "manifest.tsv"
SPLITS = ("train", "val")

# Marker colors for object classes 1, 2, ...
MARKER_COLORS = np.array(
    [
        (0.9, 0.1, 0.1),
        (0.1, 0.8, 0.1),
        (0.1, 0.2, 0.9),
        (0.9, 0.9, 0.1),
        (0.8, 0.1, 0.8),
        (0.1, 0.9, 0.9),
        (1.0, 0.5, 0.0),
        (0.5, 0.0, 1.0),
    ]
)


@dataclass(frozen=True)
class DatasetSpec:
    image_size: int = 64
    num_classes: int = 5
    min_shapes: int = 1
    max_shapes: int = 3
    min_extent: int = 14
    max_extent: int = 28
    fill_mean: float = 0.55
    fill_std: float = 0.12
    background_mean: float = 0.2
    background_std: float = 0.08
    marker_size: int = 3
    train_count: int = 500
    val_count: int = 100
    seed: int = 0
    max_attempts: int = 50

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(MARKER_COLORS) + 1:
            raise ValueError(f"num_classes must be in [2, {len(MARKER_COLORS) + 1}]")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        if self.marker_size < 1 or self.min_extent < self.marker_size + 4:
            raise ValueError("min_extent must leave room for the marker plus a 2 px rim")
        if self.max_extent < self.min_extent or self.max_extent > self.image_size:
            raise ValueError("need min_extent <= max_extent <= image_size")
        if self.train_count < 0 or self.val_count < 0:
            raise ValueError("sample counts must be >= 0")


@dataclass
class Sample:
    image: np.ndarray  # (1, 3, h, w), multiples of 1/255
    labels: np.ndarray  # (h, w) int64


def _shape_mask(rng, size: int, spec: DatasetSpec) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    if rng.random() < 0.5:
        h, w = rng.integers(spec.min_extent, spec.max_extent + 1, size=2)
        top = rng.integers(0, size - h + 1)
        left = rng.integers(0, size - w + 1)
        return (yy >= top) & (yy < top + h) & (xx >= left) & (xx < left + w)
    r = rng.uniform(spec.min_extent / 2, spec.max_extent / 2)
    cy = rng.uniform(r, size - r)
    cx = rng.uniform(r, size - r)
    return (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    return binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=r)


def _marker_anchors(mask: np.ndarray, m: int) -> np.ndarray:
    """Top-left corners where the m x m marker plus a 1 px rim lies inside ``mask``."""
    win = sliding_window_view(mask, (m + 2, m + 2)).all(axis=(2, 3))
    return np.argwhere(win) + 1


def generate(spec: DatasetSpec, index: int) -> Sample:
    """Sample ``index`` of the dataset; a pure function of ``(spec, index)``."""
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    rng = np.random.default_rng([spec.seed, index])
    s = spec.image_size
    m = spec.marker_size
    labels = np.zeros((s, s), dtype=np.int64)
    occupied = np.zeros((s, s), dtype=bool)
    gray = np.clip(rng.normal(spec.background_mean, spec.background_std, (s, s)), 0, 1)
    image = np.repeat(gray[None], 3, axis=0)

    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    for _ in range(n_shapes):
        for _attempt in range(spec.max_attempts):
            mask = _shape_mask(rng, s, spec)
            if (mask & _dilate(occupied, 2)).any():
                continue
            anchors = _marker_anchors(mask, m)
            if len(anchors) == 0:
                continue
            break
        else:
            continue
        cls = int(rng.integers(1, spec.num_classes))
        fill = np.clip(rng.normal(spec.fill_mean, spec.fill_std, (s, s)), 0, 1)
        image[:, mask] = fill[mask]
        ay, ax = anchors[rng.integers(len(anchors))]
        image[:, ay : ay + m, ax : ax + m] = MARKER_COLORS[cls - 1][:, None, None]
        labels[mask] = cls
        occupied |= mask
    image = np.rint(image * 255) / 255
    return Sample(image[None], labels)


def split_indices(spec: DatasetSpec, split: str) -> range:
    if split == "train":
        return range(spec.train_count)
    if split == "val":
        return range(spec.train_count, spec.train_count + spec.val_count)
    raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")


def generate_split(spec: DatasetSpec, split: str) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked ``(X, y)`` arrays: X (n, 3, h, w), y (n, h, w)."""
    samples = [generate(spec, i) for i in split_indices(spec, split)]
    s = spec.image_size
    if not samples:
        return np.zeros((0, 3, s, s)), np.zeros((0, s, s), dtype=np.int64)
    return (
        np.concatenate([smp.image for smp in samples]),
        np.stack([smp.labels for smp in samples]),
    )


# --------------------------------------------------------------------------
# on-disk datasets


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    image: Path
    label: Path


def write_manifest(root: os.PathLike, entries: List[ManifestEntry]) -> Path:
    root = Path(root)
    lines = []
    for e in entries:
        img = Path(e.image)
        lab = Path(e.label)
        img = img.relative_to(root) if img.is_absolute() else img
        lab = lab.relative_to(root) if lab.is_absolute() else lab
        lines.append(f"{e.split}\t{img.as_posix()}\t{lab.as_posix()}\n")
    path = root / MANIFEST_NAME
    path.write_text("".join(lines), encoding="utf-8")
    return path


def read_manifest(root: os.PathLike, check: bool = True) -> List[ManifestEntry]:
    """Entries of ``root``'s manifest with paths resolved against ``root``.

    An empty directory yields an empty listing.
    """
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        if root.is_dir() and not any(root.iterdir()):
            return []
        raise FileNotFoundError(f"no manifest at {path}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected split<TAB>image<TAB>label")
        split, img, lab = parts
        entry = ManifestEntry(split, root / img, root / lab)
        if check:
            for p in (entry.image, entry.label):
                if not p.exists():
                    raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
        entries.append(entry)
    return entries


def write_dataset(spec: DatasetSpec, root: os.PathLike) -> List[ManifestEntry]:
    """Generate every split into ``root`` as PPM/PGM pairs plus the manifest."""
    root = Path(root)
    entries = []
    for split in SPLITS:
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i in split_indices(spec, split):
            smp = generate(spec, i)
            img = d / f"{i:05d}.ppm"
            lab = d / f"{i:05d}.pgm"
            save_ppm(img, smp.image)
            save_pgm(lab, smp.labels)
            entries.append(ManifestEntry(split, img.relative_to(root), lab.relative_to(root)))
    write_manifest(root, entries)
    return entries


def load_split(root: os.PathLike, split: str) -> Tuple[np.ndarray, np.ndarray]:
    entries = [e for e in read_manifest(root) if e.split == split]
    if not entries:
        raise ValueError(f"manifest at {root} has no {split!r} entries")
    images = np.stack([load_ppm(e.image) for e in entries])
    labels = np.stack([load_pgm(e.label) for e in entries])
    return images, labels


def class_palette(num_classes: int) -> np.ndarray:
    """RGB palette for label visualisations: background black, then marker colors."""
    extra = np.array([(1.0, 1.0, 1.0)])
    colors = np.concatenate([np.zeros((1, 3)), MARKER_COLORS, extra])
    if num_classes > len(colors):
        raise ValueError(f"palette covers at most {len(colors)} classes")
    return colors[:num_classes]

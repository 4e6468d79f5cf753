"""Input checks for the estimator API."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .ops import IGNORE_LABEL


def check_images(X, channels: Optional[int] = None) -> np.ndarray:
    """Return ``X`` as a finite float64 array of shape (n, c, h, w)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images of shape (n, c, h, w), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} image channels, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or infinite values")
    return X


def check_labels(
    y, X: Optional[np.ndarray] = None, num_classes: Optional[int] = None, ignore_label: int = IGNORE_LABEL
) -> np.ndarray:
    """Return ``y`` as an int64 (n, h, w) label array matching ``X``."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"expected label maps of shape (n, h, w), got {y.shape}")
    if y.dtype.kind == "f":
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("label maps must hold integers")
    elif y.dtype.kind not in "iub":
        raise ValueError(f"label maps must hold integers, got dtype {y.dtype}")
    y = y.astype(np.int64)
    if X is not None and (y.shape[0], *y.shape[1:]) != (X.shape[0], *X.shape[2:]):
        raise ValueError(f"labels {y.shape} do not match images {X.shape}")
    scored = y[y != ignore_label]
    if scored.size and scored.min() < 0:
        raise ValueError("negative label found")
    if num_classes is not None and scored.size and scored.max() >= num_classes:
        raise ValueError(f"label {int(scored.max())} outside [0, {num_classes})")
    return y


def infer_num_classes(y: np.ndarray, ignore_label: int = IGNORE_LABEL) -> int:
    scored = y[y != ignore_label]
    if scored.size == 0:
        raise ValueError("every pixel carries ignore_label; cannot infer classes")
    return max(2, int(scored.max()) + 1)

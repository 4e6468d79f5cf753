"""Confusion-matrix based segmentation scores (pAcc, mAcc, mIoU)."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .ops import IGNORE_LABEL


class Scores(NamedTuple):
    pacc: float
    macc: float
    miou: float


def update_confusion(
    cm: np.ndarray, pred: np.ndarray, gt: np.ndarray, ignore_label: int = IGNORE_LABEL
) -> np.ndarray:
    """Return ``cm`` plus the counts of ``(gt, pred)`` pairs; rows are ground truth."""
    k = cm.shape[0]
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    keep = gt != ignore_label
    p = pred[keep].astype(np.int64)
    g = gt[keep].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= k):
        raise ValueError(f"predicted label outside [0, {k})")
    if g.size and (g.min() < 0 or g.max() >= k):
        raise ValueError(f"ground-truth label outside [0, {k}) and not ignore_label")
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    return cm + counts


class ConfusionMatrix:
    def __init__(self, num_classes: int, ignore_label: int = IGNORE_LABEL):
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, gt) -> "ConfusionMatrix":
        self.counts = update_confusion(self.counts, pred, gt, self.ignore_label)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.num_classes, self.ignore_label)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def scores(self) -> Scores:
        return metrics(self.counts)


def per_class_iou(cm: np.ndarray) -> np.ndarray:
    """IoU per class; NaN where the class is neither present nor predicted."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    union = cm.sum(axis=1) + cm.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def metrics(cm: np.ndarray) -> Scores:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm)
    rows = cm.sum(axis=1)
    present = rows > 0
    pacc = tp.sum() / total
    macc = float(np.mean(tp[present] / rows[present]))
    iou = per_class_iou(cm)
    miou = float(np.nanmean(iou))
    return Scores(float(pacc), macc, miou)

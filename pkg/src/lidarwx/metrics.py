"""Confusion-matrix IoU / mIoU and per-point correctness flags."""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import CorruptValueError, EmptyInputError, ShapeError
from .pointcloud import LabelArray

CORRECT, INCORRECT, IGNORED = 0, 1, 2


class ConfusionMatrix:
    """counts[g, p] = number of non-ignored points with truth g predicted as p."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ShapeError(f"counts shape {self.counts.shape} != ({num_classes}, {num_classes})")

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    __add__ = merge

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and other.num_classes == self.num_classes
                and np.array_equal(self.counts, other.counts))


def _as_arrays(preds, labels):
    if isinstance(labels, LabelArray):
        truth, ignore = labels.semantic, labels.ignore_label
    else:
        truth, ignore = labels
        truth = np.asarray(truth, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    if preds.shape != truth.shape:
        raise ShapeError(f"{preds.shape[0]} predictions for {truth.shape[0]} labels")
    return preds, truth, ignore


def accumulate(cm: ConfusionMatrix, preds, labels: LabelArray) -> ConfusionMatrix:
    """Return a new matrix with these predictions added; ignore-labeled points skipped."""
    preds, truth, ignore = _as_arrays(preds, labels)
    keep = truth != ignore
    c = cm.num_classes
    for name, arr in (("label", truth), ("prediction", preds)):
        bad = np.flatnonzero(keep & ((arr < 0) | (arr >= c)))
        if bad.size:
            i = int(bad[0])
            raise CorruptValueError(f"{name} {arr[i]} at index {i} outside [0, {c})", i)
    flat = truth[keep] * c + preds[keep]
    add = np.bincount(flat, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(c, cm.counts + add)


def class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both truth and predictions."""
    tp = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - np.diag(cm.counts)
    iou = np.full(cm.num_classes, np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    iou = class_iou(cm)
    present = ~np.isnan(iou)
    if not present.any():
        raise EmptyInputError("no class is present in the confusion matrix")
    return float(iou[present].mean())


def correctness_flags(preds, labels: LabelArray) -> np.ndarray:
    preds, truth, ignore = _as_arrays(preds, labels)
    flags = np.where(preds == truth, CORRECT, INCORRECT).astype(np.uint8)
    flags[truth == ignore] = IGNORED
    return flags


def report_csv(cm: ConfusionMatrix, class_names=None) -> str:
    names = list(class_names) if class_names else [str(c) for c in range(cm.num_classes)]
    iou = class_iou(cm)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou", "present"])
    for name, v in zip(names, iou):
        present = not np.isnan(v)
        w.writerow([name, repr(float(v)) if present else "", int(present)])
    w.writerow(["mIoU", repr(miou(cm)), ""])
    return buf.getvalue()

"""Confusion-matrix evaluation: per-class IoU and mIoU."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError


class ConfusionMatrix:
    """K x K counts, rows = ground truth, cols = prediction; ignore excluded.

    Accumulation is additive and order-invariant, so per-image matrices can be
    computed in parallel and merged with +.
    """

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        if counts.shape != (num_classes, num_classes):
            raise InvalidArgumentError("confusion matrix shape mismatch")
        self.counts = counts.astype(np.int64)

    def accumulate(self, pred_labels: np.ndarray, gt_labels: np.ndarray,
                   ignore_index: int = 255) -> "ConfusionMatrix":
        pred = np.asarray(pred_labels).ravel()
        gt = np.asarray(gt_labels).ravel()
        if pred.shape != gt.shape:
            raise InvalidArgumentError("prediction/ground-truth shape mismatch")
        keep = gt != ignore_index
        pred, gt = pred[keep], gt[keep]
        k = self.num_classes
        if pred.size and (pred.min() < 0 or pred.max() >= k or gt.min() < 0 or gt.max() >= k):
            raise InvalidArgumentError("label values out of range")
        self.counts += np.bincount(gt * k + pred, minlength=k * k).reshape(k, k)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise InvalidArgumentError("cannot merge matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def total(self) -> int:
        return int(self.counts.sum())

    def iou(self) -> tuple[list[float], float]:
        """Per-class IoU (nan for classes absent from both gt and pred) and mIoU.

        Absent classes are excluded from the mean rather than counted as 0.
        """
        if self.total() == 0:
            raise UndefinedMetricError("confusion matrix is empty")
        tp = np.diag(self.counts).astype(np.float64)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        denom = tp + fp + fn
        per_class = [float(tp[c] / denom[c]) if denom[c] > 0 else float("nan")
                     for c in range(self.num_classes)]
        defined = [v for v in per_class if not np.isnan(v)]
        if not defined:
            raise UndefinedMetricError("no class appears in gt or prediction")
        return per_class, float(np.mean(defined))


def accumulate(cm: ConfusionMatrix, pred_labels: np.ndarray, gt_labels: np.ndarray,
               ignore_index: int = 255) -> ConfusionMatrix:
    return cm.accumulate(pred_labels, gt_labels, ignore_index)


def iou(cm: ConfusionMatrix) -> tuple[list[float], float]:
    return cm.iou()

"""Segmentation scoring: confusion matrix, per-class accuracy and IoU."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class ConfusionMatrix:
    """Rows are ground truth, columns are prediction."""

    def __init__(self, n_classes=9):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def add(self, truth, prediction):
        truth = np.asarray(truth).reshape(-1)
        prediction = np.asarray(prediction).reshape(-1)
        if truth.shape != prediction.shape:
            raise ContractError("truth and prediction sizes differ")
        n = self.n_classes
        idx = truth.astype(np.int64) * n + prediction.astype(np.int64)
        self.counts += np.bincount(idx, minlength=n * n).reshape(n, n)

    def merge(self, other):
        self.counts += other.counts


def metrics(cm: ConfusionMatrix):
    """Per-class accuracy (recall) and IoU plus their means.

    Classes absent from both truth and prediction are excluded from the
    means (their per-class entries are NaN). A class that was predicted but
    never true scores accuracy 0.
    """
    counts = cm.counts
    if counts.sum() == 0:
        raise ContractError("empty confusion matrix")
    diag = np.diag(counts).astype(np.float64)
    rows = counts.sum(axis=1).astype(np.float64)
    cols = counts.sum(axis=0).astype(np.float64)
    present = (rows + cols) > 0
    acc = np.full(cm.n_classes, np.nan)
    iou = np.full(cm.n_classes, np.nan)
    for c in range(cm.n_classes):
        if not present[c]:
            continue
        acc[c] = diag[c] / rows[c] if rows[c] > 0 else 0.0
        iou[c] = diag[c] / (rows[c] + cols[c] - diag[c])
    m_acc = float(np.nanmean(acc))
    m_iou = float(np.nanmean(iou))
    return acc, iou, m_acc, m_iou

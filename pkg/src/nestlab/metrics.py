"""Confusion-matrix IoU and cosine feature-similarity statistics."""

import numpy as np

from .errors import ConfigError, ShapeError


class ConfusionMatrix:
    """Square count matrix, rows = ground truth, columns = prediction."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, truth, pred):
        truth = np.asarray(truth).ravel()
        pred = np.asarray(pred).ravel()
        if truth.shape != pred.shape:
            raise ShapeError("truth/pred length mismatch")
        idx = truth * self.num_classes + pred
        binc = np.bincount(idx, minlength=self.num_classes**2)
        self.counts += binc.reshape(self.num_classes, self.num_classes)

    def merge(self, other):
        self.counts += other.counts

    @property
    def total(self):
        return int(self.counts.sum())


def iou_per_class(cm):
    """IoU per class; absent classes (zero denominator) come back as NaN."""
    tp = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - np.diag(cm.counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)
    return iou


def miou_range(ious, class_ids):
    """Mean IoU over present classes in the given id range."""
    ids = list(class_ids)
    if not ids:
        raise ConfigError("empty class range")
    vals = np.asarray([ious[i] for i in ids])
    present = ~np.isnan(vals)
    if not present.any():
        return float("nan")
    return float(vals[present].mean())


def cosine_stats(a, b):
    """Per-pixel cosine similarity between two feature grids: (mean, std).

    Zero-norm pixels contribute similarity 0; std is the population std.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"feature grids {a.shape} vs {b.shape}")
    fa = a.reshape(-1, a.shape[-1])
    fb = b.reshape(-1, b.shape[-1])
    na = np.linalg.norm(fa, axis=1)
    nb = np.linalg.norm(fb, axis=1)
    denom = na * nb
    dots = np.einsum("ij,ij->i", fa, fb)
    sims = np.where(denom > 0, dots / np.maximum(denom, 1e-300), 0.0)
    return float(sims.mean()), float(sims.std())

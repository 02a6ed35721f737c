"""Training objectives with hand-derived gradients w.r.t. the logits.

Class indices here are head column indices: column 0 is background,
columns 1..n_old-1 are previously learned classes, columns n_old.. are the
current step's classes.  The unbiased variants fold probability mass
across that split to model background shift.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .numerics import softmax

_LOG_FLOOR = 1e-300


@dataclass
class LossConfig:
    lambda_kd: float = 10.0
    n_old: int = 1

    def validate(self):
        if self.lambda_kd < 0:
            raise ValueError("lambda_kd must be non-negative")


def _safe_log(x):
    return np.log(np.maximum(x, _LOG_FLOOR))


def ce(logits, labels):
    """Mean cross entropy over pixels; returns (loss, dloss/dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise DataError("label outside class range")
    q = softmax(logits, axis=1)
    loss = -_safe_log(q[np.arange(n), labels]).mean()
    dz = q.copy()
    dz[np.arange(n), labels] -= 1.0
    return loss, dz / n


def unbiased_ce(logits, labels, n_old):
    """Cross entropy where background absorbs all old-class probability.

    For label 0 the modeled probability is sum of columns 0..n_old-1; for a
    new-class label it is the plain softmax probability.  Labels in
    1..n_old-1 are invalid: step labels must already be background-shifted.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if n_old < 1 or n_old > c:
        raise ShapeError(f"n_old={n_old} incompatible with {c} columns")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError("label outside class range")
    bad = (labels > 0) & (labels < n_old)
    if bad.any():
        raise DataError(f"label {labels[bad][0]} belongs to a previous step")

    q = softmax(logits, axis=1)
    fold = q[:, :n_old].sum(axis=1)
    is_bg = labels == 0
    modeled = np.where(is_bg, fold, q[np.arange(n), labels])
    loss = -_safe_log(modeled).mean()

    dz = np.empty_like(q)
    # new-class pixels: standard CE gradient
    new_rows = ~is_bg
    dz[new_rows] = q[new_rows]
    dz[new_rows, labels[new_rows]] -= 1.0
    # background pixels: d(-log fold)/dz_k = q_k - q_k*[k<n_old]/fold
    if is_bg.any():
        qb = q[is_bg]
        g = qb.copy()
        g[:, :n_old] -= qb[:, :n_old] / fold[is_bg, None]
        dz[is_bg] = g
    return loss, dz / n


def unbiased_kd(logits, old_probs):
    """Distillation toward the old model with new-class mass folded into bg.

    `old_probs` has n_old columns and rows summing to 1.  The current
    model's background probability is the sum over {bg} + new columns.
    """
    logits = np.asarray(logits, dtype=np.float64)
    old_probs = np.asarray(old_probs, dtype=np.float64)
    n, c = logits.shape
    if old_probs.ndim != 2 or old_probs.shape[0] != n:
        raise ShapeError("old_probs row count mismatch")
    n_old = old_probs.shape[1]
    if n_old < 1 or n_old > c:
        raise ShapeError(f"old model has {n_old} classes, current has {c}")

    q = softmax(logits, axis=1)
    s_new = q[:, 0] + q[:, n_old:].sum(axis=1)
    t0 = old_probs[:, 0]
    per_pixel = t0 * _safe_log(s_new)
    if n_old > 1:
        per_pixel = per_pixel + (old_probs[:, 1:n_old] * _safe_log(q[:, 1:n_old])).sum(axis=1)
    loss = -per_pixel.mean()

    # folded-background term + per-old-class terms
    in_fold = np.zeros(c)
    in_fold[0] = 1.0
    in_fold[n_old:] = 1.0
    dz = t0[:, None] * q * (1.0 - in_fold[None, :] / s_new[:, None])
    dz += (1.0 - t0)[:, None] * q
    if n_old > 1:
        dz[:, 1:n_old] -= old_probs[:, 1:n_old]
    return loss, dz / n


def incremental_loss(logits, labels, old_probs, n_old, lambda_kd):
    """L_unce + lambda * L_unkd; returns (total, unce, dlogits)."""
    l_ce, dz = unbiased_ce(logits, labels, n_old)
    total = l_ce
    if lambda_kd > 0 and old_probs is not None:
        l_kd, dz_kd = unbiased_kd(logits, old_probs)
        total = l_ce + lambda_kd * l_kd
        dz = dz + lambda_kd * dz_kd
    return total, l_ce, dz

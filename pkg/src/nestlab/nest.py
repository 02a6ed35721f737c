"""Similarity-initialized classifier generation and pre-tuning.

New-class weight columns are generated from the old head as
``w_c = (M_c * W_old) @ P_c`` with a per-class importance matrix M_c and
projection column P_c.  Both are initialized from cross-task similarity
scores computed by the frozen old model, then tuned by SGD on the
unbiased cross entropy while everything else stays frozen.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .losses import unbiased_ce
from .numerics import softmax


@dataclass
class PretuneConfig:
    epochs: int = 30
    lr: float = 0.3
    batch_size: int = 8
    weight_align: bool = True
    use_pretuned_bg: bool = False

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class TransformSet:
    """Learnable transforms for one incremental step.

    One (importance, projection) pair per new class plus the background
    pair; optional per-new-class bias scalars.  The train_* flags let
    ablations freeze either matrix family.
    """

    new_classes: tuple
    importance: dict  # class id -> (d, n_old)
    projection: dict  # class id -> (n_old, 1)
    bg_importance: np.ndarray  # (d, 1)
    bg_projection: float
    biases: dict = None  # class id -> float, or None
    train_importance: bool = True
    train_projection: bool = True

    def param_count(self):
        n = sum(m.size for m in self.importance.values())
        n += sum(p.size for p in self.projection.values())
        n += self.bg_importance.size + 1
        if self.biases is not None:
            n += len(self.biases)
        return n


def similarity_scores(p_u, w_old):
    """Decompose the old head's scoring of one embedding.

    Returns the Hadamard table H = W_old * p_u (column-broadcast) and the
    softmax of its column sums, which equals softmax(W_old^T p_u).
    """
    p_u = np.asarray(p_u, dtype=np.float64).ravel()
    w_old = np.asarray(w_old, dtype=np.float64)
    if w_old.ndim != 2 or w_old.shape[0] != p_u.shape[0]:
        raise ShapeError(f"embedding dim {p_u.shape[0]} vs head {w_old.shape}")
    h = w_old * p_u[:, None]
    s = softmax(h.sum(axis=0))
    return h, s


def binary_mask(h):
    """1 where the Hadamard entry is strictly positive, else 0."""
    return (np.asarray(h) > 0).astype(np.float64)


def init_importance(pixels, w_old):
    """Average masked score tables over all pixels of one new class.

    pixels: (N, d) embeddings of the class from the frozen old backbone.
    Result entries lie in [0, 1].
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] == 0:
        raise DataError("need at least one pixel embedding")
    w_old = np.asarray(w_old, dtype=np.float64)
    h_all = pixels[:, :, None] * w_old[None, :, :]  # (N, d, n_old)
    s_all = softmax(pixels @ w_old, axis=1)  # (N, n_old)
    contrib = (h_all > 0) * s_all[:, None, :]
    return contrib.mean(axis=0)


def init_projection(m):
    """Column-sum softmax of the importance matrix, as a column vector."""
    m = np.asarray(m, dtype=np.float64)
    return softmax(m.sum(axis=0))[:, None]


def init_background_transform(d):
    """Identity transform: the generated bg column starts equal to w_0."""
    return np.ones((d, 1)), 1.0


def generate_new_weight(m, p, w_old):
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w_old = np.asarray(w_old, dtype=np.float64)
    if m.shape != w_old.shape or p.shape != (w_old.shape[1], 1):
        raise ShapeError(f"transform shapes {m.shape}, {p.shape} vs head {w_old.shape}")
    return ((m * w_old) @ p).ravel()


def generate_bg_weight(m0, p0, w0):
    m0 = np.asarray(m0, dtype=np.float64).ravel()
    w0 = np.asarray(w0, dtype=np.float64).ravel()
    if m0.shape != w0.shape:
        raise ShapeError(f"bg transform {m0.shape} vs column {w0.shape}")
    return m0 * w0 * float(p0)


def generate_columns(tset, w_old):
    """New-class columns in head-column order, as a (d, n_new) block."""
    cols = [generate_new_weight(tset.importance[c], tset.projection[c], w_old) for c in tset.new_classes]
    return np.stack(cols, axis=1) if cols else np.zeros((w_old.shape[0], 0))


def assemble_pretune_head(old_head, tset):
    """Head used during pre-tuning: generated bg, frozen old, generated new."""
    from .model import Head

    w_old = old_head.weights
    bg = generate_bg_weight(tset.bg_importance, tset.bg_projection, w_old[:, 0])
    new_cols = generate_columns(tset, w_old)
    weights = np.concatenate([bg[:, None], w_old[:, 1:], new_cols], axis=1)
    biases = None
    if old_head.biases is not None:
        new_b = [tset.biases[c] if tset.biases else 0.0 for c in tset.new_classes]
        biases = np.concatenate([old_head.biases, np.asarray(new_b)])
    return Head(weights, biases)


def _collect_class_pixels(step_data, old_model):
    """Frozen-backbone embeddings grouped by step label, plus flat arrays."""
    feats = []
    labels = []
    for img in step_data.train_images:
        h, w, d_in = img.features.shape
        feats.append(old_model.backbone.forward(img.features.reshape(-1, d_in)))
        labels.append(img.full_labels.ravel())
    return feats, labels


def similarity_init_transforms(step_data, old_model, use_bias=False):
    """Initialize a TransformSet from cross-task similarity scores."""
    w_old = old_model.head.weights
    d = w_old.shape[0]
    feats, labels = _collect_class_pixels(step_data, old_model)
    all_feats = np.concatenate(feats)
    all_labels = np.concatenate(labels)
    new_classes = tuple(step_data.class_set)
    importance, projection = {}, {}
    for c in new_classes:
        pix = all_feats[all_labels == c]
        if pix.shape[0] == 0:
            raise DataError(f"no pixels of class {c} in the step's train split")
        m = init_importance(pix, w_old)
        importance[c] = m
        projection[c] = init_projection(m)
    m0, p0 = init_background_transform(d)
    biases = {c: 0.0 for c in new_classes} if use_bias else None
    return TransformSet(new_classes, importance, projection, m0, p0, biases)


def random_init_transforms(step_data, old_model, rng, use_bias=False):
    """Ablation baseline: standard-normal matrices, projection re-normalized."""
    w_old = old_model.head.weights
    d, n_old = w_old.shape
    new_classes = tuple(step_data.class_set)
    importance, projection = {}, {}
    for c in new_classes:
        importance[c] = rng.normal((d, n_old))
        projection[c] = softmax(rng.normal(n_old))[:, None]
    m0, p0 = init_background_transform(d)
    biases = {c: 0.0 for c in new_classes} if use_bias else None
    return TransformSet(new_classes, importance, projection, m0, p0, biases)


def apply_component_variant(tset, variant):
    """Restrict the transform family for the component-level ablation.

    importance_only: projection frozen at uniform; projection_only:
    importance frozen at all-ones.
    """
    if variant == "both":
        return tset
    if variant == "importance_only":
        for c in tset.new_classes:
            n_old = tset.projection[c].shape[0]
            tset.projection[c] = np.full((n_old, 1), 1.0 / n_old)
        tset.train_projection = False
    elif variant == "projection_only":
        for c in tset.new_classes:
            tset.importance[c] = np.ones_like(tset.importance[c])
        tset.train_importance = False
    else:
        raise ValueError(f"unknown component variant {variant!r}")
    return tset


def pretune(step_data, old_model, tset, cfg, rng):
    """Tune the transforms by SGD on unbiased cross entropy.

    The old model is never written to; only importance/projection matrices
    (and optional new-class biases) move.  Backbone features are computed
    once since the feature extractor is frozen.
    """
    cfg.validate()
    w_old = old_model.head.weights
    d, n_old = w_old.shape
    w0 = w_old[:, 0]
    new_classes = tset.new_classes
    col_of = {0: 0}
    for i, c in enumerate(new_classes):
        col_of[c] = n_old + i

    feats, labels = _collect_class_pixels(step_data, old_model)
    col_labels = []
    for lab in labels:
        mapped = np.zeros_like(lab)
        for c, col in col_of.items():
            mapped[lab == c] = col
        col_labels.append(mapped)

    n_images = len(feats)
    use_bias = old_model.head.biases is not None
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_images)
        for start in range(0, n_images, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = np.concatenate([feats[i] for i in batch])
            y = np.concatenate([col_labels[i] for i in batch])

            head = assemble_pretune_head(old_model.head, tset)
            z = head.logits(x)
            loss, dz = unbiased_ce(z, y, n_old)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite pre-tuning loss at epoch {epoch}, batch {start // cfg.batch_size}")

            g = x.T @ dz  # (d, n_old + n_new): grad w.r.t. head columns
            g0 = g[:, 0]
            d_m0 = (g0 * w0 * tset.bg_projection)[:, None]
            d_p0 = float(g0 @ (tset.bg_importance.ravel() * w0))
            if tset.train_importance:
                tset.bg_importance = tset.bg_importance - cfg.lr * d_m0
            if tset.train_projection:
                tset.bg_projection = tset.bg_projection - cfg.lr * d_p0
            for i, c in enumerate(new_classes):
                gc = g[:, n_old + i]
                m, p = tset.importance[c], tset.projection[c]
                d_m = gc[:, None] * w_old * p.ravel()[None, :]
                d_p = ((m * w_old).T @ gc)[:, None]
                if tset.train_importance:
                    tset.importance[c] = m - cfg.lr * d_m
                if tset.train_projection:
                    tset.projection[c] = p - cfg.lr * d_p
                if use_bias and tset.biases is not None:
                    tset.biases[c] = tset.biases[c] - cfg.lr * float(dz[:, n_old + i].sum())
    return tset


def weight_align(old_cols, new_cols):
    """Rescale new columns so mean norms match the old columns'."""
    old_cols = np.asarray(old_cols, dtype=np.float64)
    new_cols = np.asarray(new_cols, dtype=np.float64)
    mean_old = np.linalg.norm(old_cols, axis=0).mean()
    mean_new = np.linalg.norm(new_cols, axis=0).mean()
    if mean_new == 0:
        raise NumericError("new columns have zero mean norm")
    return new_cols * (mean_old / mean_new)


def extra_param_count(n_new, n_old, d):
    """Scalars added by the transforms (with per-new-class biases)."""
    if min(n_new, n_old, d) < 1:
        raise ValueError("all arguments must be >= 1")
    return n_new * n_old * (d + 1) + d + n_new + 1

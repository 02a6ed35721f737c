"""Classifier-initialization strategies used by the ablation harness.

Selected by config string: "random", "background", "two_stage", or
"nest[:matrix_init:components]" with matrix_init in {similarity, random}
and components in {both, importance_only, projection_only}.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .losses import unbiased_ce
from . import nest


@dataclass
class InitStrategy:
    kind: str  # random | background | two_stage | nest
    matrix_init: str = "similarity"
    components: str = "both"

    def label(self):
        if self.kind == "nest":
            return f"nest:{self.matrix_init}:{self.components}"
        return self.kind


def parse_strategy(text):
    parts = text.split(":")
    kind = parts[0]
    if kind in ("random", "background", "two_stage"):
        if len(parts) > 1:
            raise ConfigError(f"strategy {kind!r} takes no options")
        return InitStrategy(kind)
    if kind == "nest":
        matrix_init = parts[1] if len(parts) > 1 else "similarity"
        components = parts[2] if len(parts) > 2 else "both"
        if matrix_init not in ("similarity", "random"):
            raise ConfigError(f"unknown matrix init {matrix_init!r}")
        if components not in ("both", "importance_only", "projection_only"):
            raise ConfigError(f"unknown component variant {components!r}")
        return InitStrategy("nest", matrix_init, components)
    raise ConfigError(f"unknown strategy {text!r}")


def _background_copy(old_model, n_new):
    w0 = old_model.head.weights[:, 0]
    cols = np.tile(w0[:, None], (1, n_new))
    biases = None
    if old_model.head.biases is not None:
        biases = np.full(n_new, old_model.head.biases[0] - np.log(n_new + 1))
    return cols, biases


def _two_stage_tune(step_data, old_model, cols, biases, cfg, rng):
    """SGD on L_unce updating only the new columns; everything else frozen."""
    w_old = old_model.head.weights
    n_old = w_old.shape[1]
    col_of = {0: 0}
    for i, c in enumerate(step_data.class_set):
        col_of[c] = n_old + i

    feats, labels = [], []
    for img in step_data.train_images:
        h, w, d_in = img.features.shape
        feats.append(old_model.backbone.forward(img.features.reshape(-1, d_in)))
        mapped = np.zeros(h * w, dtype=np.int64)
        flat = img.full_labels.ravel()
        for c, col in col_of.items():
            mapped[flat == c] = col
        labels.append(mapped)

    n_images = len(feats)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_images)
        for start in range(0, n_images, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = np.concatenate([feats[i] for i in batch])
            y = np.concatenate([labels[i] for i in batch])
            z = x @ np.concatenate([w_old, cols], axis=1)
            if biases is not None:
                full_b = np.concatenate([old_model.head.biases, biases])
                z = z + full_b
            loss, dz = unbiased_ce(z, y, n_old)
            if not np.isfinite(loss):
                raise NumericError(f"two-stage tuning diverged at epoch {epoch}")
            cols = cols - cfg.lr * (x.T @ dz[:, n_old:])
            if biases is not None:
                biases = biases - cfg.lr * dz[:, n_old:].sum(axis=0)
    return cols, biases


def initialize_head(strategy, old_model, step_data, pretune_cfg, rng, use_bias=False):
    """New-class columns (d, n_new), optional biases (n_new,), and an
    optional replacement background column (only when the pre-tuned
    background transform is kept for formal training)."""
    n_new = len(step_data.class_set)
    d = old_model.head.dim
    if strategy.kind == "random":
        cols = 0.01 * rng.normal((d, n_new))
        biases = np.zeros(n_new) if use_bias else None
        return cols, biases, None
    if strategy.kind == "background":
        cols, biases = _background_copy(old_model, n_new)
        return cols, biases, None
    if strategy.kind == "two_stage":
        cols, biases = _background_copy(old_model, n_new)
        cols, biases = _two_stage_tune(step_data, old_model, cols, biases, pretune_cfg, rng)
        return cols, biases, None
    if strategy.kind == "nest":
        if strategy.matrix_init == "similarity":
            tset = nest.similarity_init_transforms(step_data, old_model, use_bias=use_bias)
        else:
            tset = nest.random_init_transforms(step_data, old_model, rng, use_bias=use_bias)
        nest.apply_component_variant(tset, strategy.components)
        tset = nest.pretune(step_data, old_model, tset, pretune_cfg, rng)
        cols = nest.generate_columns(tset, old_model.head.weights)
        if pretune_cfg.weight_align and cols.size:
            cols = nest.weight_align(old_model.head.weights, cols)
        biases = None
        if use_bias and tset.biases is not None:
            biases = np.asarray([tset.biases[c] for c in tset.new_classes])
        bg_col = None
        if pretune_cfg.use_pretuned_bg:
            bg_col = nest.generate_bg_weight(
                tset.bg_importance, tset.bg_projection, old_model.head.weights[:, 0]
            )
        return cols, biases, bg_col
    raise ConfigError(f"unknown strategy kind {strategy.kind!r}")

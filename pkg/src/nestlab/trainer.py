"""End-to-end incremental training: base step, per-step classifier
initialization, formal training with the unbiased losses, and
stability instrumentation (per-epoch loss and feature-similarity stats).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .losses import ce, incremental_loss
from .metrics import ConfusionMatrix, cosine_stats, iou_per_class, miou_range
from .model import Backbone, Head, SegModel, grow_head
from .nest import PretuneConfig
from .numerics import SplitMix64
from .strategies import initialize_head, parse_strategy
from .synthdata import build_world, step_view


@dataclass
class ExperimentConfig:
    world: object  # WorldSpec
    sequence: object  # TaskSequence
    strategy: str = "nest:similarity:both"
    pretune: PretuneConfig = field(default_factory=PretuneConfig)
    backbone_dim: int = 16
    base_epochs: int = 60
    base_lr: float = 0.2
    inc_epochs: int = 10
    inc_lr: float = 0.005
    batch_size: int = 8
    lambda_kd: float = 1.0
    fix_old_classifiers: bool = False
    poly_power: float = 0.0
    use_bias: bool = False
    seed: int = 1


@dataclass
class EpochStats:
    loss_mean: float
    loss_std: float
    featsim_mean: float
    featsim_std: float


@dataclass
class StepReport:
    step: int
    miou_base: float
    miou_new: float
    miou_all: float
    epochs: list = field(default_factory=list)
    wall_seconds: float = 0.0


@dataclass
class RunResult:
    reports: list
    per_class_iou: dict  # class id -> IoU at the final step


def _col_of_class(sequence):
    """Head column index per class id: introduction order, bg = 0."""
    return {c: i + 1 for i, c in enumerate(sequence.class_order)}


def _map_labels(labels, col_of):
    mapped = np.zeros(labels.size, dtype=np.int64)
    flat = labels.ravel()
    for c, col in col_of.items():
        mapped[flat == c] = col
    return mapped


def _flatten_images(images, col_of):
    feats, labels = [], []
    for img in images:
        h, w, d_in = img.features.shape
        feats.append(img.features.reshape(-1, d_in))
        labels.append(_map_labels(img.full_labels, col_of))
    return feats, labels


def track_stability(live_model, snapshot, step_data):
    """Cosine similarity between live and frozen backbone features."""
    sims_input = []
    for img in step_data.train_images:
        h, w, d_in = img.features.shape
        x = img.features.reshape(-1, d_in)
        sims_input.append((live_model.backbone.forward(x), snapshot.backbone.forward(x)))
    a = np.concatenate([s[0] for s in sims_input])
    b = np.concatenate([s[1] for s in sims_input])
    return cosine_stats(a, b)


def _sgd_epoch(model, feats, labels, order, batch_size, lr_fn, loss_fn, frozen_cols=()):
    """One epoch of minibatch SGD; returns per-batch losses."""
    losses = []
    it = 0
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        x = np.concatenate([feats[i] for i in batch])
        y = np.concatenate([labels[i] for i in batch])
        out, acts = model.backbone.forward_cache(x)
        z = model.head.logits(out)
        loss, dz = loss_fn(z, y, out)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at batch {it}")
        losses.append(loss)
        lr = lr_fn(it)
        d_head = out.T @ dz
        if frozen_cols:
            d_head[:, list(frozen_cols)] = 0.0
        dfeats = dz @ model.head.weights.T
        layer_grads, _ = model.backbone.backward(dfeats, acts)
        model.head.weights = model.head.weights - lr * d_head
        if model.head.biases is not None:
            db = dz.sum(axis=0)
            if frozen_cols:
                db[list(frozen_cols)] = 0.0
            model.head.biases = model.head.biases - lr * db
        for li, (gw, gb) in enumerate(layer_grads):
            w, b = model.backbone.layers[li]
            model.backbone.layers[li] = (w - lr * gw, b - lr * gb)
        it += 1
    return losses


def _evaluate(model, test_images, n_cols, col_of):
    cm = ConfusionMatrix(n_cols)
    for img in test_images:
        h, w, d_in = img.features.shape
        feats = model.backbone.forward(img.features.reshape(-1, d_in))
        pred = np.argmax(model.head.logits(feats), axis=1)
        truth = _map_labels(img.full_labels, col_of)
        cm.add(truth, pred)
    return cm


def _report_from_cm(cm, step, sequence):
    ious = iou_per_class(cm)
    n_base = sequence.base_count
    n_seen = n_base + step * sequence.increment
    base_ids = list(range(0, n_base + 1))
    new_ids = list(range(n_base + 1, n_seen + 1))
    all_ids = list(range(0, n_seen + 1))
    miou_new = miou_range(ious, new_ids) if new_ids else float("nan")
    return ious, miou_range(ious, base_ids), miou_new, miou_range(ious, all_ids)


def train_base_step(cfg, world, rng=None):
    """Plain cross-entropy training on step 0 classes."""
    if rng is None:
        rng = SplitMix64(cfg.seed)
    d_in = world.spec.feature_dim
    backbone = Backbone.single_relu(d_in, cfg.backbone_dim, rng)
    n_cols = cfg.sequence.base_count + 1
    head_w = 0.01 * rng.normal((cfg.backbone_dim, n_cols))
    head_b = np.zeros(n_cols) if cfg.use_bias else None
    model = SegModel(backbone, Head(head_w, head_b))

    data = step_view(cfg.sequence, world, 0)
    col_of = _col_of_class(cfg.sequence)
    feats, labels = _flatten_images(data.train_images, col_of)

    def loss_fn(z, y, out):
        loss, dz = ce(z, y)
        return loss, dz

    stats = []
    snapshot = model.snapshot()
    for epoch in range(cfg.base_epochs):
        order = rng.permutation(len(feats))
        losses = _sgd_epoch(model, feats, labels, order, cfg.batch_size, lambda it: cfg.base_lr, loss_fn)
        sim_mean, sim_std = track_stability(model, snapshot, data)
        stats.append(EpochStats(float(np.mean(losses)), float(np.std(losses)), sim_mean, sim_std))
    return model, data, stats


def run_step(model, cfg, world, t, rng):
    """One incremental step: init strategy, grow head, formal training."""
    t0 = time.perf_counter()
    snapshot = model.snapshot()
    snapshot_bytes = snapshot.param_bytes()
    data = step_view(cfg.sequence, world, t)
    strategy = parse_strategy(cfg.strategy)

    new_cols, new_biases, bg_col = initialize_head(strategy, snapshot, data, cfg.pretune, rng, use_bias=cfg.use_bias)
    n_old = model.head.num_classes
    model.head = grow_head(model.head, new_cols, new_biases)
    if bg_col is not None:
        model.head.weights[:, 0] = bg_col

    col_of = _col_of_class(cfg.sequence)
    feats, labels = _flatten_images(data.train_images, col_of)
    snap_feats = [snapshot.backbone.forward(x) for x in feats]
    old_probs_per_image = None
    if cfg.lambda_kd > 0:
        from .numerics import softmax

        old_probs_per_image = [softmax(snapshot.head.logits(f), axis=1) for f in snap_feats]

    frozen_cols = tuple(range(1, n_old)) if cfg.fix_old_classifiers else ()
    total_iters = cfg.inc_epochs * max(1, (len(feats) + cfg.batch_size - 1) // cfg.batch_size)
    iters_done = [0]

    def lr_fn(it):
        lr = cfg.inc_lr
        if cfg.poly_power > 0:
            frac = min(iters_done[0] / total_iters, 1.0)
            lr = cfg.inc_lr * (1.0 - frac) ** cfg.poly_power
        iters_done[0] += 1
        return lr

    stats = []
    for epoch in range(cfg.inc_epochs):
        order = rng.permutation(len(feats))
        batch_losses = []
        it = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = np.concatenate([feats[i] for i in batch])
            y = np.concatenate([labels[i] for i in batch])
            out, acts = model.backbone.forward_cache(x)
            z = model.head.logits(out)
            op = None
            if old_probs_per_image is not None:
                op = np.concatenate([old_probs_per_image[i] for i in batch])
            total, l_ce, dz = incremental_loss(z, y, op, n_old, cfg.lambda_kd)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at step {t}, epoch {epoch}, batch {it}")
            batch_losses.append(total)
            lr = lr_fn(it)
            d_head = out.T @ dz
            if frozen_cols:
                d_head[:, list(frozen_cols)] = 0.0
            dfeats = dz @ model.head.weights.T
            layer_grads, _ = model.backbone.backward(dfeats, acts)
            model.head.weights = model.head.weights - lr * d_head
            if model.head.biases is not None:
                db = dz.sum(axis=0)
                if frozen_cols:
                    db[list(frozen_cols)] = 0.0
                model.head.biases = model.head.biases - lr * db
            for li, (gw, gb) in enumerate(layer_grads):
                w, b = model.backbone.layers[li]
                model.backbone.layers[li] = (w - lr * gw, b - lr * gb)
            it += 1
        sim_mean, sim_std = track_stability(model, snapshot, data)
        stats.append(EpochStats(float(np.mean(batch_losses)), float(np.std(batch_losses)), sim_mean, sim_std))

    if snapshot.param_bytes() != snapshot_bytes:
        raise NumericError("old-model snapshot was mutated during the step")

    cm = _evaluate(model, data.test_images, model.head.num_classes, col_of)
    ious, miou_base, miou_new, miou_all = _report_from_cm(cm, t, cfg.sequence)
    report = StepReport(t, miou_base, miou_new, miou_all, stats, time.perf_counter() - t0)
    return model, report, ious


def run_experiment(cfg):
    """Run all steps of the sequence; returns a RunResult."""
    cfg.sequence.validate(cfg.world.num_classes)
    world = build_world(cfg.world)
    rng = SplitMix64(cfg.seed)

    t0 = time.perf_counter()
    model, base_data, base_stats = train_base_step(cfg, world, rng)
    cm = _evaluate(model, base_data.test_images, model.head.num_classes, _col_of_class(cfg.sequence))
    ious, miou_base, miou_new, miou_all = _report_from_cm(cm, 0, cfg.sequence)
    reports = [StepReport(0, miou_base, miou_new, miou_all, base_stats, time.perf_counter() - t0)]

    for t in range(1, cfg.sequence.num_steps):
        model, report, ious = run_step(model, cfg, world, t, rng)
        reports.append(report)

    col_of = _col_of_class(cfg.sequence)
    per_class = {0: float(ious[0])}
    for c, col in col_of.items():
        if col < len(ious):
            per_class[c] = float(ious[col])
    return RunResult(reports=reports, per_class_iou=per_class)

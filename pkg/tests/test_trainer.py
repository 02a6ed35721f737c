"""Trainer: end-to-end contracts on small worlds (kept fast)."""

import numpy as np
import pytest

from nestlab.nest import PretuneConfig
from nestlab.synthdata import TaskSequence, WorldSpec
from nestlab.trainer import ExperimentConfig, run_experiment


def small_config(**overrides):
    world = WorldSpec(
        num_classes=4,
        feature_dim=8,
        height=8,
        width=8,
        images_per_class=6,
        test_images_per_class=2,
        seed=2,
    )
    seq = TaskSequence(class_order=(1, 2, 3, 4), base_count=2, increment=1)
    base = dict(
        world=world,
        sequence=seq,
        strategy="nest:similarity:both",
        pretune=PretuneConfig(epochs=3, lr=0.05, batch_size=4),
        backbone_dim=8,
        base_epochs=10,
        base_lr=0.1,
        inc_epochs=3,
        inc_lr=0.01,
        batch_size=4,
        lambda_kd=1.0,
        seed=1,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_step_and_report_structure():
    result = run_experiment(small_config())
    assert [r.step for r in result.reports] == [0, 1, 2]
    assert len(result.reports[1].epochs) == 3
    # classes 1..4 plus background all have a final IoU entry
    assert set(result.per_class_iou) == {0, 1, 2, 3, 4}


def test_determinism():
    a = run_experiment(small_config())
    b = run_experiment(small_config())
    for ra, rb in zip(a.reports, b.reports):
        assert ra.miou_all == rb.miou_all or (np.isnan(ra.miou_all) and np.isnan(rb.miou_all))
        for ea, eb in zip(ra.epochs, rb.epochs):
            assert ea.loss_mean == eb.loss_mean
            assert ea.featsim_mean == eb.featsim_mean


def test_single_step_sequence_is_base_training_only():
    seq = TaskSequence(class_order=(1, 2, 3, 4), base_count=4, increment=1)
    result = run_experiment(small_config(sequence=seq))
    assert len(result.reports) == 1
    assert result.reports[0].step == 0


def test_zero_incremental_epochs_keeps_old_model():
    # lambda 0 and no formal epochs: the step only appends initialized columns
    cfg = small_config(inc_epochs=0, lambda_kd=0.0, strategy="background")
    result = run_experiment(cfg)
    assert len(result.reports) == 3
    for rep in result.reports[1:]:
        assert rep.epochs == []


def test_fix_old_classifiers_byte_identity():
    from nestlab.model import Backbone, Head, SegModel
    from nestlab.numerics import SplitMix64
    from nestlab.synthdata import build_world
    from nestlab.trainer import run_step, train_base_step

    cfg = small_config(fix_old_classifiers=True, strategy="background")
    world = build_world(cfg.world)
    rng = SplitMix64(cfg.seed)
    model, _, _ = train_base_step(cfg, world, rng)
    old_cols = model.head.weights[:, 1:].copy()
    model, report, _ = run_step(model, cfg, world, 1, rng)
    # columns of previously learned classes must not move (bg may)
    assert model.head.weights[:, 1 : old_cols.shape[1] + 1].tobytes() == old_cols.tobytes()


def test_backbone_moves_without_fixing():
    from nestlab.numerics import SplitMix64
    from nestlab.synthdata import build_world
    from nestlab.trainer import run_step, train_base_step

    cfg = small_config(strategy="background")
    world = build_world(cfg.world)
    rng = SplitMix64(cfg.seed)
    model, _, _ = train_base_step(cfg, world, rng)
    w_before = model.backbone.layers[0][0].copy()
    model, report, _ = run_step(model, cfg, world, 1, rng)
    assert not np.array_equal(model.backbone.layers[0][0], w_before)
    # stability stats live in [−1, 1] and are populated per epoch
    assert len(report.epochs) == cfg.inc_epochs
    for st in report.epochs:
        assert -1.0 <= st.featsim_mean <= 1.0 + 1e-12


def test_poly_decay_changes_trajectory():
    a = run_experiment(small_config(poly_power=0.0))
    b = run_experiment(small_config(poly_power=0.9))
    la = [e.loss_mean for r in a.reports[1:] for e in r.epochs]
    lb = [e.loss_mean for r in b.reports[1:] for e in r.epochs]
    assert la != lb


def test_use_bias_mode_runs():
    result = run_experiment(small_config(use_bias=True))
    assert len(result.reports) == 3
    assert np.isfinite(result.reports[-1].miou_all)


def test_disjoint_protocol_runs():
    seq = TaskSequence(class_order=(1, 2, 3, 4), base_count=2, increment=1, setting="disjoint")
    result = run_experiment(small_config(sequence=seq))
    assert len(result.reports) == 3


def test_all_strategies_complete():
    for strat in ("random", "background", "two_stage", "nest:similarity:both",
                  "nest:random:both", "nest:similarity:importance_only",
                  "nest:similarity:projection_only"):
        result = run_experiment(small_config(strategy=strat))
        assert len(result.reports) == 3, strat


def test_permuted_class_orders_complete():
    # five random class orders, per the sequence-permutation table structure
    from nestlab.numerics import SplitMix64

    rng = SplitMix64(77)
    for _ in range(5):
        order = tuple(int(c) + 1 for c in rng.permutation(4))
        seq = TaskSequence(class_order=order, base_count=2, increment=1)
        result = run_experiment(small_config(sequence=seq))
        assert set(result.per_class_iou) == {0, 1, 2, 3, 4}


def test_base_step_reaches_high_train_accuracy():
    # the S6-1 base problem is separable; accuracy > 90% within 30 epochs
    from nestlab.numerics import SplitMix64
    from nestlab.synthdata import build_world, s61_sequence, s61_world_spec, step_view
    from nestlab.trainer import _col_of_class, _map_labels, train_base_step

    cfg = ExperimentConfig(
        world=s61_world_spec(1), sequence=s61_sequence(), base_epochs=30, base_lr=0.2, seed=1
    )
    world = build_world(cfg.world)
    model, data, _ = train_base_step(cfg, world, SplitMix64(1))
    col_of = _col_of_class(cfg.sequence)
    hits = total = 0
    for img in data.train_images:
        h, w, d_in = img.features.shape
        feats = model.backbone.forward(img.features.reshape(-1, d_in))
        pred = np.argmax(model.head.logits(feats), axis=1)
        truth = _map_labels(img.full_labels, col_of)
        hits += int((pred == truth).sum())
        total += truth.size
    assert hits / total > 0.9

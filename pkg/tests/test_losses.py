"""Losses: frozen reference values, fold-then-CE oracles, gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestlab.errors import DataError, ShapeError
from nestlab.losses import ce, incremental_loss, unbiased_ce, unbiased_kd
from nestlab.numerics import SplitMix64, finite_diff_grad, softmax


def logits_for_probs(probs):
    """Any logit vector whose softmax equals the given probabilities."""
    return np.log(np.asarray(probs, dtype=np.float64))


def test_ce_uniform_logits():
    for c in (2, 3, 7):
        loss, _ = ce(np.zeros((4, c)), np.zeros(4, dtype=np.int64))
        assert abs(loss - np.log(c)) < 1e-12


def test_ce_half_probability():
    z = logits_for_probs([[0.5, 0.25, 0.25]])
    loss, _ = ce(z, np.array([0]))
    assert abs(loss - 0.693147) < 1e-6


def test_ce_label_range():
    with pytest.raises(DataError):
        ce(np.zeros((2, 3)), np.array([0, 3]))


def test_unbiased_ce_new_class_pixel():
    z = logits_for_probs([[0.2, 0.3, 0.5]])
    loss, _ = unbiased_ce(z, np.array([2]), n_old=2)
    assert abs(loss - 0.693147) < 1e-6


def test_unbiased_ce_background_fold():
    # bg absorbs the old class: -log(0.2 + 0.3)
    z = logits_for_probs([[0.2, 0.3, 0.5]])
    loss, _ = unbiased_ce(z, np.array([0]), n_old=2)
    assert abs(loss - 0.693147) < 1e-6


def test_unbiased_ce_fold_then_ce_reference():
    # independent reference: fold old columns into bg, then plain CE
    rng = SplitMix64(21)
    for _ in range(25):
        n, c, n_old = 6, 5, 3
        z = rng.normal((n, c))
        y = rng.integers(c - n_old + 1, size=n)
        y = np.where(y > 0, y + n_old - 1, 0)
        q = softmax(z, axis=1)
        folded = np.concatenate([q[:, :n_old].sum(axis=1, keepdims=True), q[:, n_old:]], axis=1)
        y_f = np.where(y > 0, y - n_old + 1, 0)
        ref = -np.log(folded[np.arange(n), y_f]).mean()
        loss, _ = unbiased_ce(z, y, n_old)
        assert abs(loss - ref) < 1e-12


def test_unbiased_ce_empty_fold_equals_ce():
    rng = SplitMix64(22)
    z = rng.normal((8, 4))
    y = rng.integers(4, size=8)
    a, da = unbiased_ce(z, y, n_old=1)
    b, db = ce(z, y)
    assert abs(a - b) < 1e-12
    np.testing.assert_allclose(da, db, atol=1e-12)


def test_unbiased_ce_rejects_old_class_labels():
    with pytest.raises(DataError):
        unbiased_ce(np.zeros((2, 4)), np.array([0, 2]), n_old=3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-30, 30))
def test_unbiased_ce_logit_shift_invariant(shift):
    rng = SplitMix64(23)
    z = rng.normal((5, 4))
    y = np.array([0, 3, 2, 0, 3])
    a, _ = unbiased_ce(z, y, n_old=2)
    b, _ = unbiased_ce(z + shift, y, n_old=2)
    assert abs(a - b) < 1e-9


def test_unbiased_kd_hand_computed():
    # old probs (0.4, 0.6); current (0.1, 0.5, 0.4) -> q_hat = (0.5, 0.5)
    z = logits_for_probs([[0.1, 0.5, 0.4]])
    old = np.array([[0.4, 0.6]])
    loss, _ = unbiased_kd(z, old)
    assert abs(loss - 0.693147) < 1e-6


def test_unbiased_kd_self_distillation_minimum():
    # q reproducing the old probs with zero new mass attains the target's
    # entropy, the minimum over q_hat for a fixed target
    old = np.array([[0.3, 0.7], [0.6, 0.4]])
    eps = 1e-12
    z = logits_for_probs(np.concatenate([old * (1 - eps), np.full((2, 1), eps)], axis=1))
    loss, _ = unbiased_kd(z, old)
    entropy = -(old * np.log(old)).sum(axis=1).mean()
    assert abs(loss - entropy) < 1e-6
    # any perturbation increases the loss
    z2 = z.copy()
    z2[:, 0] += 0.3
    assert unbiased_kd(z2, old)[0] > loss


def test_unbiased_kd_fold_then_cross_entropy_reference():
    rng = SplitMix64(24)
    for _ in range(25):
        n, n_old, n_new = 5, 3, 2
        z = rng.normal((n, n_old + n_new))
        old = softmax(rng.normal((n, n_old)), axis=1)
        q = softmax(z, axis=1)
        q_hat = np.concatenate(
            [(q[:, 0] + q[:, n_old:].sum(axis=1))[:, None], q[:, 1:n_old]], axis=1
        )
        ref = -(old * np.log(q_hat)).sum(axis=1).mean()
        loss, _ = unbiased_kd(z, old)
        assert abs(loss - ref) < 1e-12


def test_unbiased_kd_shape_errors():
    with pytest.raises(ShapeError):
        unbiased_kd(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        unbiased_kd(np.zeros((2, 3)), np.zeros((2, 4)))


def _random_instance(rng, n=4, c=5, n_old=3):
    z = rng.normal((n, c))
    y = rng.integers(c - n_old + 1, size=n)
    y = np.where(y > 0, y + n_old - 1, 0)
    old = softmax(rng.normal((n, n_old)), axis=1)
    return z, y, old


def test_gradients_match_finite_differences():
    rng = SplitMix64(25)
    for _ in range(30):
        z, y, old = _random_instance(rng)
        _, dz = ce(z, y)
        num = finite_diff_grad(lambda a: ce(a, y)[0], z)
        np.testing.assert_allclose(dz, num, rtol=1e-4, atol=1e-8)
        _, dz = unbiased_ce(z, y, 3)
        num = finite_diff_grad(lambda a: unbiased_ce(a, y, 3)[0], z)
        np.testing.assert_allclose(dz, num, rtol=1e-4, atol=1e-8)
        _, dz = unbiased_kd(z, old)
        num = finite_diff_grad(lambda a: unbiased_kd(a, old)[0], z)
        np.testing.assert_allclose(dz, num, rtol=1e-4, atol=1e-8)


def test_incremental_loss_combination():
    rng = SplitMix64(26)
    z, y, old = _random_instance(rng)
    total, l_ce, dz = incremental_loss(z, y, old, n_old=3, lambda_kd=2.5)
    ce_only, dce = unbiased_ce(z, y, 3)
    kd_only, dkd = unbiased_kd(z, old)
    assert abs(total - (ce_only + 2.5 * kd_only)) < 1e-12
    assert abs(l_ce - ce_only) < 1e-12
    np.testing.assert_allclose(dz, dce + 2.5 * dkd, atol=1e-12)
    # lambda 0 short-circuits the distillation term
    t0, _, dz0 = incremental_loss(z, y, None, n_old=3, lambda_kd=0.0)
    assert abs(t0 - ce_only) < 1e-12
    np.testing.assert_allclose(dz0, dce, atol=1e-12)


def test_losses_nonnegative():
    rng = SplitMix64(27)
    for _ in range(20):
        z, y, old = _random_instance(rng)
        assert unbiased_ce(z, y, 3)[0] >= 0.0
        assert unbiased_kd(z, old)[0] >= 0.0

import numpy as np
import pytest

import semadv.nets as nets
from semadv.augment import TransformFamily
from semadv.ebm import (EbmTrainConfig, NetEnergy, ReplayBuffer, cd_gradient,
                        draw_negatives, energy_values, train_single_image_ebm)

from helpers import fd_gradient, rel_err


def f64_params(seed=0):
    return nets.init_energy_net(np.random.default_rng(seed), dtype=np.float64)


def f32_params(seed=0):
    return nets.init_energy_net(np.random.default_rng(seed))


# -- contrastive gradient ---------------------------------------------------------


def test_cd_equal_batches_cancel_contrastive_part(rng):
    params = f32_params()
    batch = rng.random((4, 1, 28, 28)).astype(np.float32)
    grads, pos_e, neg_e = cd_gradient(params, batch, batch, alpha_reg=0.0)
    assert pos_e == neg_e
    for g in grads.values():
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_cd_equal_batches_keep_regularizer(rng):
    params = f32_params()
    batch = rng.random((4, 1, 28, 28)).astype(np.float32)
    grads, _, _ = cd_gradient(params, batch, batch, alpha_reg=0.1)
    total = sum(float(np.abs(g).sum()) for g in grads.values())
    assert total > 0.0


def test_cd_gradient_matches_fd_on_energy_difference(rng):
    params = f64_params(1)
    pos = rng.random((1, 1, 28, 28))
    neg = rng.random((1, 1, 28, 28))
    grads, _, _ = cd_gradient(params, pos, neg, alpha_reg=0.0)
    for name in ("conv1.w", "fc2.w", "fc1.b"):
        p = params[name]
        coords = rng.choice(p.size, size=min(8, p.size), replace=False)

        def f(arr):
            trial = {k: (v.detach() if k != name else None) for k, v in params.items()}
            from semadv.tensor import Tensor
            trial[name] = Tensor(arr)
            e_pos = energy_values(trial, pos)
            e_neg = energy_values(trial, neg)
            return float(e_pos.mean() - e_neg.mean())

        fd = fd_gradient(f, p.data, h=1e-5, coords=coords)
        m = ~np.isnan(fd.ravel())
        assert rel_err(grads[name].ravel()[m], fd.ravel()[m]) < 1e-5, name


def test_cd_mean_semantics_invariant_to_duplication(rng):
    params = f32_params(2)
    pos = rng.random((3, 1, 28, 28)).astype(np.float32)
    neg = rng.random((3, 1, 28, 28)).astype(np.float32)
    g1, _, _ = cd_gradient(params, pos, neg, alpha_reg=0.05)
    g2, _, _ = cd_gradient(params, np.concatenate([pos, pos]),
                           np.concatenate([neg, neg]), alpha_reg=0.05)
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-5)


def test_cd_rejects_empty_batches(rng):
    with pytest.raises(ValueError, match="non-empty"):
        cd_gradient(f32_params(), np.empty((0, 1, 28, 28)), np.ones((1, 1, 28, 28)))


# -- replay buffer ----------------------------------------------------------------


def test_buffer_respects_capacity_and_box(rng):
    buf = ReplayBuffer(8, (1, 28, 28), rng)
    for _ in range(4):
        buf.push(rng.random((3, 1, 28, 28)).astype(np.float32))
    assert buf.size == 8
    assert buf._store[:buf.size].min() >= 0.0 and buf._store[:buf.size].max() <= 1.0


def test_buffer_rejects_out_of_box(rng):
    buf = ReplayBuffer(4, (1, 2, 2), rng)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        buf.push(np.full((1, 1, 2, 2), 1.5, dtype=np.float32))


def test_buffer_full_reinit_is_fresh_noise(rng):
    buf = ReplayBuffer(4, (1, 4, 4), rng)
    buf.push(np.zeros((4, 1, 4, 4), dtype=np.float32))
    inits = buf.sample_inits(16, reinit_prob=1.0)
    assert inits.min() > 0.0  # uniform draws, not the stored zeros


def test_buffer_no_reinit_returns_stored(rng):
    buf = ReplayBuffer(4, (1, 4, 4), rng)
    buf.push(np.full((4, 1, 4, 4), 0.5, dtype=np.float32))
    inits = buf.sample_inits(8, reinit_prob=0.0)
    np.testing.assert_array_equal(inits, np.full((8, 1, 4, 4), 0.5, dtype=np.float32))


def test_empty_buffer_always_fresh(rng):
    buf = ReplayBuffer(4, (1, 4, 4), rng)
    inits = buf.sample_inits(5, reinit_prob=0.0)
    assert inits.shape == (5, 1, 4, 4)
    assert inits.min() >= 0.0 and inits.max() <= 1.0


# -- negative draws ----------------------------------------------------------------


def test_negatives_in_box_and_buffered(rng):
    params = f32_params(3)
    cfg = EbmTrainConfig(steps=1, batch_size=4, lmc_steps=5, lmc_step_size=0.1)
    buf = ReplayBuffer(16, (1, 28, 28), np.random.default_rng(0))
    neg = draw_negatives(params, buf, 4, cfg, np.random.default_rng(1))
    assert neg.shape == (4, 1, 28, 28)
    assert neg.min() >= 0.0 and neg.max() <= 1.0
    assert buf.size == 4


def test_negatives_descend_frozen_energy(rng):
    # longer chains should land at lower energy than their initializations
    params = f32_params(4)
    cfg = EbmTrainConfig(steps=1, batch_size=8, lmc_steps=500, lmc_step_size=0.05)
    buf = ReplayBuffer(64, (1, 28, 28), np.random.default_rng(2))
    inits = buf.sample_inits(8, reinit_prob=1.0)
    buf2 = ReplayBuffer(64, (1, 28, 28), np.random.default_rng(2))  # same stream
    neg = draw_negatives(params, buf2, 8, cfg, np.random.default_rng(3))
    e0 = energy_values(params, inits).mean()
    e1 = energy_values(params, neg).mean()
    assert e1 < e0


# -- training loop -----------------------------------------------------------------


def test_zero_steps_returns_initialized_params(rng):
    fam = TransformFamily.identity()
    x = rng.random((1, 28, 28)).astype(np.float32)
    cfg = EbmTrainConfig(steps=0, batch_size=2, lmc_steps=2, seed=5)
    params, history = train_single_image_ebm(x, fam, cfg)
    assert history == []
    ref = nets.init_energy_net(np.random.default_rng(np.random.SeedSequence(5).spawn(4)[0]))
    for k in ref:
        np.testing.assert_array_equal(params[k].data, ref[k].data)


def test_training_trajectory_seed_deterministic(rng):
    fam = TransformFamily.mnist()
    x = rng.random((1, 28, 28)).astype(np.float32) * 0.8
    cfg = EbmTrainConfig(steps=3, batch_size=2, lmc_steps=3, seed=9)
    p1, h1 = train_single_image_ebm(x, fam, cfg)
    p2, h2 = train_single_image_ebm(x, fam, cfg)
    assert h1 == h2
    for k in p1:
        np.testing.assert_array_equal(p1[k].data, p2[k].data)


def test_history_records_every_step(rng):
    fam = TransformFamily.identity()
    x = rng.random((1, 28, 28)).astype(np.float32)
    cfg = EbmTrainConfig(steps=4, batch_size=2, lmc_steps=2, seed=1)
    _, history = train_single_image_ebm(x, fam, cfg)
    assert [row[0] for row in history] == [0, 1, 2, 3]
    assert all(np.isfinite(row[1]) and np.isfinite(row[2]) for row in history)


def test_net_energy_adapter_consistency(rng):
    params = f32_params(6)
    x = rng.random((3, 1, 28, 28)).astype(np.float32)
    e = NetEnergy(params)
    total, grad = e.value_and_grad(x)
    assert total == pytest.approx(float(e.per_sample(x).sum()), rel=1e-5)
    assert grad.shape == x.shape

"""Loss/gradient, schedule, optimizer, augmentation, and train-loop tests."""

import os

import numpy as np
import pytest

from haarmotion import autodiff as ad
from haarmotion import datametrics as dm
from haarmotion import model
from haarmotion import training as tr


def tiny_settings(**kw):
    cfg = model.ModelConfig(frames_in=16, frames_out=4, joints=2,
                            num_blocks=1, seed=1)
    base = dict(model=cfg, iterations=3, batch_size=4,
                augment=tr.AugmentConfig(flip_prob=0.0, reverse_prob=0.0),
                seed=7, log_every=1, checkpoint_every=2)
    base.update(kw)
    return tr.TrainSettings(**base)


def tiny_clips(n=4, joints=2, length=40, seed=0):
    return dm.synth_generate(n, joints=joints, length=length, seed=seed)


# -------------------------------------------------------------------- loss


def test_loss_zero_when_equal():
    pred = np.random.default_rng(0).normal(size=(10, 6))
    got = tr.loss(pred, pred.copy())
    assert got.total == 0.0 and got.l_re == 0.0 and got.l_v == 0.0


def test_loss_three_four_five_single_frame():
    pred = np.array([[3.0, 4.0, 0.0]])
    target = np.zeros((1, 3))
    got = tr.loss(pred, target)
    assert got.l_re == 5.0
    assert got.l_v == 0.0
    assert got.velocity_degenerate
    assert got.total == 5.0


def test_loss_total_is_sum_of_terms():
    rng = np.random.default_rng(1)
    for _ in range(10):
        pred = rng.normal(scale=50.0, size=(10, 12))
        target = rng.normal(scale=50.0, size=(10, 12))
        got = tr.loss(pred, target)
        assert got.total == got.l_re + got.l_v
        assert got.l_re >= 0.0 and got.l_v >= 0.0
        assert not got.velocity_degenerate


def test_loss_velocity_hand_value():
    # constant offset: l_re = |offset|, velocities match -> l_v = 0
    target = np.random.default_rng(2).normal(size=(5, 3))
    pred = target + np.array([0.0, 3.0, 4.0])
    got = tr.loss(pred, target)
    assert np.isclose(got.l_re, 5.0, atol=1e-12)
    assert np.isclose(got.l_v, 0.0, atol=1e-12)


def test_loss_validation():
    with pytest.raises(ValueError):
        tr.loss(np.zeros((5, 6)), np.zeros((4, 6)))
    with pytest.raises(ValueError):
        tr.loss(np.zeros((5, 7)), np.zeros((5, 7)))


def test_loss_gradient_matches_finite_differences():
    for seed in range(5):
        rng = np.random.default_rng(400 + seed)
        batch, dt, c = 2, 6, 9
        pred = ad.Value(rng.normal(scale=10.0, size=(batch * dt, c)))
        target = rng.normal(scale=10.0, size=(batch * dt, c))

        def f():
            node, _ = tr.loss_value(pred, target, batch=batch)
            return node

        err = ad.grad_check(f, [pred])
        assert err < 1e-5, err


def test_loss_value_matches_loss():
    rng = np.random.default_rng(3)
    pred = rng.normal(size=(8, 6))
    target = rng.normal(size=(8, 6))
    node, breakdown = tr.loss_value(ad.Value(pred), target, batch=1)
    direct = tr.loss(pred, target)
    assert node.data[0, 0] == breakdown.total
    assert np.isclose(breakdown.total, direct.total, atol=1e-12)
    assert np.isclose(breakdown.l_re, direct.l_re, atol=1e-12)
    assert np.isclose(breakdown.l_v, direct.l_v, atol=1e-12)


# ---------------------------------------------------------------- schedule


def test_lr_anchors():
    assert tr.lr_at(0) == 3e-4
    assert tr.lr_at(29999) == 3e-4
    assert tr.lr_at(30000) == 6e-5
    assert tr.lr_at(32999) == 6e-5
    assert tr.lr_at(33000) == 5.1e-5
    assert tr.lr_at(36000) == 6e-5 * 0.85 * 0.85


def test_lr_non_increasing():
    values = [tr.lr_at(i) for i in range(0, 80000, 500)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(v > 0 for v in values)


def test_lr_range():
    with pytest.raises(ValueError):
        tr.lr_at(-1)
    with pytest.raises(ValueError):
        tr.lr_at(80000)


# -------------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_params():
    p = ad.Value(np.random.default_rng(4).normal(size=(3, 3)))
    before = p.data.copy()
    state = tr.init_adam([p])
    tr.adam_step([p], [np.zeros((3, 3))], state, lr=1e-3)
    assert np.array_equal(p.data, before)
    assert state.t == 1


def test_adam_first_step_closed_form():
    p = ad.Value([[1.0]])
    state = tr.init_adam([p])
    tr.adam_step([p], [np.ones((1, 1))], state, lr=1e-3)
    # mhat = 1, vhat = 1 -> delta = -lr / (1 + eps)
    expected = 1.0 - 1e-3 / (1.0 + 1e-8)
    assert np.isclose(p.data[0, 0], expected, rtol=0, atol=1e-18)
    assert np.isclose(1.0 - p.data[0, 0], 9.9999999e-4, atol=1e-12)


def test_adam_deterministic_trajectory():
    def run():
        rng = np.random.default_rng(5)
        p = ad.Value(rng.normal(size=(2, 2)))
        state = tr.init_adam([p])
        for _ in range(20):
            tr.adam_step([p], [rng.normal(size=(2, 2))], state, lr=1e-2)
        return p.data

    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_and_misalignment():
    p = ad.Value(np.ones((2, 2)))
    state = tr.init_adam([p])
    bad = np.ones((2, 2))
    bad[0, 0] = np.nan
    with pytest.raises(tr.TrainingAborted):
        tr.adam_step([p], [bad], state, lr=1e-3)
    with pytest.raises(ValueError):
        tr.adam_step([p], [], state, lr=1e-3)


# ------------------------------------------------------------ augmentation


def test_augment_off_is_identity():
    rng = np.random.default_rng(6)
    cfg = tr.AugmentConfig(flip_prob=0.0, reverse_prob=0.0)
    x = rng.normal(size=(50, 6))
    y = rng.normal(size=(10, 6))
    xa, ya = tr.augment(x, y, rng, cfg)
    assert np.array_equal(xa, x) and np.array_equal(ya, y)


def test_flip_twice_is_identity():
    rng = np.random.default_rng(7)
    cfg = tr.AugmentConfig(flip_prob=1.0, reverse_prob=0.0)
    x = rng.normal(size=(20, 9))
    y = rng.normal(size=(5, 9))
    x1, y1 = tr.augment(x, y, rng, cfg)
    assert not np.array_equal(x1, x)
    x2, y2 = tr.augment(x1, y1, rng, cfg)
    assert np.allclose(x2, x, atol=0) and np.allclose(y2, y, atol=0)


def test_flip_negates_lateral_axis_only():
    rng = np.random.default_rng(8)
    cfg = tr.AugmentConfig(flip_prob=1.0, reverse_prob=0.0)
    x = rng.normal(size=(4, 6))
    y = rng.normal(size=(2, 6))
    xa, ya = tr.augment(x, y, rng, cfg)
    for arr, ref in [(xa, x), (ya, y)]:
        r3 = ref.reshape(-1, 2, 3)
        a3 = arr.reshape(-1, 2, 3)
        assert np.array_equal(a3[..., 0], r3[..., 0])
        assert np.array_equal(a3[..., 1], -r3[..., 1])
        assert np.array_equal(a3[..., 2], r3[..., 2])


def test_flip_preserves_joint_distances():
    rng = np.random.default_rng(9)
    cfg = tr.AugmentConfig(flip_prob=1.0, reverse_prob=0.0)
    x = rng.normal(size=(6, 9))
    xa, _ = tr.augment(x, rng.normal(size=(2, 9)), rng, cfg)
    j = x.reshape(6, 3, 3)
    ja = xa.reshape(6, 3, 3)
    for a in range(3):
        for b in range(a + 1, 3):
            assert np.allclose(np.linalg.norm(j[:, a] - j[:, b], axis=1),
                               np.linalg.norm(ja[:, a] - ja[:, b], axis=1),
                               atol=1e-12)


def test_reverse_reindexes_window():
    # frames labeled by index: reversed 60-frame window splits into
    # input [59..10] and target [9..0]
    frames = np.repeat(np.arange(60.0)[:, None], 6, axis=1)
    rng = np.random.default_rng(10)
    cfg = tr.AugmentConfig(flip_prob=0.0, reverse_prob=1.0)
    xa, ya = tr.augment(frames[:50], frames[50:], rng, cfg)
    assert np.array_equal(xa[:, 0], np.arange(59.0, 9.0, -1.0))
    assert np.array_equal(ya[:, 0], np.arange(9.0, -1.0, -1.0))


def test_augment_config_validation():
    with pytest.raises(ValueError):
        tr.AugmentConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        tr.AugmentConfig(flip_axis=3)


# -------------------------------------------------------------------- loop


def test_train_zero_iterations_equals_build(tmp_path):
    settings = tiny_settings(iterations=0)
    result = tr.train(tiny_clips(), settings, str(tmp_path))
    fresh = model.build(settings.model)
    for (_, va), (_, vb) in zip(result.net.named_parameters(),
                                fresh.named_parameters()):
        assert np.array_equal(va.data, vb.data)
    loaded, iteration = model.load_checkpoint(result.final_checkpoint)
    assert iteration == 0
    assert result.history == []


def test_train_iteration_zero_loss_is_baseline_loss(tmp_path):
    settings = tiny_settings(iterations=1)
    clips = tiny_clips()
    result = tr.train(clips, settings, str(tmp_path))

    # replay the loop's rng stream: batch draw, then two augment coins/sample
    cfg = settings.model
    rng = np.random.default_rng(settings.seed)
    batch = dm.draw_training_windows(clips, cfg.frames_in + cfg.frames_out,
                                     settings.batch_size, rng)
    for b in range(settings.batch_size):
        batch[b, : cfg.frames_in], batch[b, cfg.frames_in:] = tr.augment(
            batch[b, : cfg.frames_in], batch[b, cfg.frames_in:], rng,
            settings.augment)
    # loss is evaluated on meter-scale values and reported rescaled to mm
    scale = model.MM_PER_UNIT
    baseline = np.repeat(batch[:, cfg.frames_in - 1 : cfg.frames_in] / scale,
                         cfg.frames_out, axis=1)
    _, meter = tr.loss_value(
        ad.Value(baseline.reshape(-1, cfg.channels)),
        batch[:, cfg.frames_in:] / scale, batch=settings.batch_size)
    row = result.history[0]
    assert row.iteration == 0
    assert row.total == meter.l_re * scale + meter.l_v * scale
    assert row.l_re == meter.l_re * scale
    assert row.l_v == meter.l_v * scale


def test_train_deterministic_given_seed(tmp_path):
    settings = tiny_settings(iterations=3)
    clips = tiny_clips()
    r1 = tr.train(clips, settings, str(tmp_path / "run1"))
    r2 = tr.train(clips, settings, str(tmp_path / "run2"))
    rows1 = [row.format() for row in r1.history]
    rows2 = [row.format() for row in r2.history]
    assert rows1 == rows2
    log1 = open(tmp_path / "run1" / tr.METRICS_NAME).read()
    log2 = open(tmp_path / "run2" / tr.METRICS_NAME).read()
    assert log1 == log2
    b1 = open(os.path.join(r1.final_checkpoint, model.PARAMS_NAME), "rb").read()
    b2 = open(os.path.join(r2.final_checkpoint, model.PARAMS_NAME), "rb").read()
    assert b1 == b2


def test_train_writes_log_and_checkpoints(tmp_path):
    settings = tiny_settings(iterations=3, log_every=2, checkpoint_every=2)
    result = tr.train(tiny_clips(), settings, str(tmp_path))
    lines = open(tmp_path / tr.METRICS_NAME).read().splitlines()
    assert lines[0] == tr.METRICS_HEADER
    assert len(lines) == 1 + len(result.history)
    # logged at 0, 2 (cadence) and 2 is also the last iteration
    assert [row.iteration for row in result.history] == [0, 2]
    for row in result.history:
        assert row.total == row.l_re + row.l_v
    assert os.path.isdir(tmp_path / "checkpoints" / "iter_00000000")
    assert os.path.isdir(tmp_path / "checkpoints" / "iter_00000002")
    _, final_iter = model.load_checkpoint(result.final_checkpoint)
    assert final_iter == 3


def test_train_loss_decreases_on_tiny_overfit(tmp_path):
    # judge on one fixed window set; per-iteration rows sample fresh batches
    settings = tiny_settings(
        iterations=80, log_every=100, checkpoint_every=0,
        schedule=tr.Schedule(base_lr=2e-3, drop_at=10**9))
    clips = tiny_clips(n=2, length=30)
    result = tr.train(clips, settings, str(tmp_path))
    cfg = settings.model
    probe = dm.draw_training_windows(
        clips, cfg.frames_in + cfg.frames_out, 16, np.random.default_rng(5))
    target = probe[:, cfg.frames_in:]

    def probe_loss(net):
        pred = model.predict_batch(net, probe[:, : cfg.frames_in])
        return tr.loss(pred.reshape(-1, cfg.channels),
                       target.reshape(-1, cfg.channels)).l_re

    before = probe_loss(model.build(cfg))
    after = probe_loss(result.net)
    assert after < 0.9 * before


def test_train_aborts_on_non_finite_loss(tmp_path, monkeypatch):
    settings = tiny_settings(iterations=2)
    real_build = model.build

    def poisoned(cfg, seed=None):
        net = real_build(cfg, seed)
        net.fc_pre.weight.data[0, 0] = np.nan
        return net

    monkeypatch.setattr(tr.model_mod, "build", poisoned)
    with pytest.raises(tr.TrainingAborted, match="iter_00000000"):
        tr.train(tiny_clips(), settings, str(tmp_path))
    # the pre-loop checkpoint is still there to resume from
    assert os.path.isdir(tmp_path / "checkpoints" / "iter_00000000")


def test_train_input_validation(tmp_path):
    with pytest.raises(ValueError):
        tr.train([], tiny_settings(), str(tmp_path))
    clips = dm.synth_generate(2, joints=5, length=40, seed=0)
    with pytest.raises(ValueError):
        tr.train(clips, tiny_settings(), str(tmp_path))

import dataclasses
import math

import numpy as np
import pytest

from helpers import zero_params
from twostage_denoise import checkpoint as ck
from twostage_denoise.checkpoint import (
    BadMagicError, TruncatedCheckpointError, VersionMismatchError, load_checkpoint,
    restore_params, save_checkpoint,
)
from twostage_denoise.data import Rng, load_dataset, training_stream
from twostage_denoise.losses import LossConfig
from twostage_denoise.network import ModelConfig, build, named_parameters, param_count
from twostage_denoise.tensor import Tensor
from twostage_denoise.trainer import (
    NonFiniteLossError, Schedule, TrainConfig, adam_step, init_optimizer, lr_at, train, train_step,
)

TINY = ModelConfig(k=1, m=0, width=16, growth=8)
MICRO = ModelConfig(k=1, m=0, width=8, growth=2)


def test_schedule_anchors():
    step = Schedule("step", 1e-4, period=100_000)
    assert lr_at(step, 0) == 1e-4
    assert abs(lr_at(step, 100_000) - 5e-5) < 1e-12
    assert abs(lr_at(step, 99_999) - 1e-4) < 1e-12
    cos = Schedule("cosine", 2e-4, lr_min=1e-6, horizon=1000)
    assert abs(lr_at(cos, 0) - 2e-4) < 1e-12
    assert abs(lr_at(cos, 1000) - 1e-6) < 1e-12
    assert abs(lr_at(cos, 500) - (2e-4 + 1e-6) / 2) < 1e-12
    assert lr_at(cos, 5000) == lr_at(cos, 1000)
    with pytest.raises(ValueError):
        lr_at(step, -1)


@pytest.mark.parametrize("sched", [Schedule("step", 1e-4, period=7), Schedule("cosine", 2e-4, horizon=50)])
def test_schedule_monotone(sched):
    vals = [lr_at(sched, i) for i in range(120)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_train_config_presets_and_validation():
    syn = TrainConfig.synthetic()
    assert syn.total_iterations == 500_000 and syn.batch == 4 and syn.patch == 128
    assert (syn.schedule.kind, syn.schedule.lr_init, syn.schedule.period) == ("step", 1e-4, 100_000)
    assert (syn.beta1, syn.beta2, syn.adam_eps) == (0.9, 0.999, 1e-8) and syn.loss.mode == "mse"
    real = TrainConfig.real(dataset_patches=1001, epochs=120)
    assert real.total_iterations == 120 * math.ceil(1001 / 4) == real.schedule.horizon
    assert real.schedule.kind == "cosine" and real.schedule.lr_init == 2e-4 and real.loss.mode == "charbonnier_edge"
    with pytest.raises(ValueError):
        TrainConfig(total_iterations=10)
    with pytest.raises(ValueError):
        Schedule("step", lr_init=0)
    with pytest.raises(ValueError):
        Schedule("linear")


def test_adam_zero_gradient_leaves_params():
    p = build(MICRO, 0)
    before = [t.data.copy() for _, t in named_parameters(p)]
    adam_step(p, {}, init_optimizer(p), 1e-3)
    assert all(np.array_equal(a, t.data) for a, (_, t) in zip(before, named_parameters(p)))


def test_adam_first_step_magnitude_is_lr():
    p = build(MICRO, 0, dtype=np.float64)
    state = init_optimizer(p)
    r = np.random.default_rng(0)
    grads = {n: r.choice([-1, 1], t.shape) * (0.5 + r.random(t.shape)) for n, t in named_parameters(p)}
    before = {n: t.data.copy() for n, t in named_parameters(p)}
    adam_step(p, grads, state, 1e-3)
    assert state.t == 1
    for n, t in named_parameters(p):
        step = before[n] - t.data
        g = grads[n]
        np.testing.assert_allclose(step, 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)
        assert np.allclose(np.abs(step), 1e-3, rtol=1e-6)


def test_adam_shape_mismatch():
    p = build(MICRO, 0)
    name = next(iter(dict(named_parameters(p))))
    with pytest.raises(ValueError, match=name):
        adam_step(p, {name: np.zeros(3)}, init_optimizer(p), 1e-3)


def fixed_batch(seed=0, size=16):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    clean = (0.3 + 0.4 * xx * yy)[None, None].astype(np.float32)
    noisy = clean + (25 / 255) * r.standard_normal(clean.shape).astype(np.float32)
    return Tensor(noisy), Tensor(clean)


def repeat(batch):
    while True:
        yield batch


def test_initial_loss_of_zero_model_is_mean_square_of_clean():
    p = zero_params(build(TINY, 0))
    noisy, clean = fixed_batch()
    cfg = TrainConfig(total_iterations=1, schedule=Schedule(period=1))
    loss = train_step(p, noisy, clean, cfg, init_optimizer(p), 0)
    # both stages output zero, so each stage contributes mean(clean^2)
    assert loss == pytest.approx(2 * float(np.mean(clean.data.astype(np.float64) ** 2)), rel=1e-6)


def test_one_step_changes_parameters():
    p = build(MICRO, 0)
    before = [t.data.copy() for _, t in named_parameters(p)]
    noisy, clean = fixed_batch()
    train_step(p, noisy, clean, TrainConfig(total_iterations=1, schedule=Schedule(period=1)), init_optimizer(p), 0)
    assert any(not np.array_equal(a, t.data) for a, (_, t) in zip(before, named_parameters(p)))


def test_overfit_loss_decreases_in_200_iterations():
    p = build(TINY, 0)
    cfg = TrainConfig(total_iterations=200, schedule=Schedule("step", 1e-3, period=200), log_every=199)
    res = train(p, repeat(fixed_batch()), cfg)
    first, last = res.log[0][1], res.log[-1][1]
    assert res.iteration == 200 and last < first


def test_non_finite_loss_aborts_with_iteration():
    p = build(MICRO, 0)
    noisy, clean = fixed_batch()
    bad = Tensor(np.full(noisy.shape, np.nan, np.float32))
    stream = iter([(noisy, clean), (bad, clean)])
    cfg = TrainConfig(total_iterations=5, schedule=Schedule(period=5))
    with pytest.raises(NonFiniteLossError, match="iteration 1") as ei:
        train(p, stream, cfg)
    assert ei.value.iteration == 1


def test_training_log_lines(tmp_path):
    p = build(MICRO, 0)
    cfg = TrainConfig(total_iterations=5, schedule=Schedule(period=5), log_every=2)
    train(p, repeat(fixed_batch()), cfg, log_path=tmp_path / "log.csv")
    rows = [l.split(",") for l in (tmp_path / "log.csv").read_text().splitlines()]
    assert [int(r[0]) for r in rows] == [0, 2, 4]
    assert all(len(r) == 3 and float(r[2]) == 1e-4 for r in rows)


# checkpoints ---------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    p = build(TINY, 3)
    state = init_optimizer(p)
    noisy, clean = fixed_batch()
    train_step(p, noisy, clean, TrainConfig(total_iterations=1, schedule=Schedule(period=1)), state, 0)
    save_checkpoint(tmp_path / "c.ckpt", p, state, 17, {"seed": 3}, {"note": "x"})
    c = load_checkpoint(tmp_path / "c.ckpt")
    assert c.config == TINY and c.iteration == 17 and c.rng == {"seed": 3} and c.meta == {"note": "x"}
    assert c.optimizer.t == 1
    q = restore_params(c)
    for (n, a), (_, b) in zip(named_parameters(p), named_parameters(q)):
        assert np.array_equal(a.data, b.data), n
        assert np.array_equal(state.m[n], c.optimizer.m[n]) and np.array_equal(state.v[n], c.optimizer.v[n])
    assert c.param_count() == param_count(p)


def test_checkpoint_param_count_default_model(tmp_path):
    p = build(ModelConfig(), 0)
    save_checkpoint(tmp_path / "d.ckpt", p)
    assert load_checkpoint(tmp_path / "d.ckpt").param_count() == param_count(p) == 5_506_436


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "c.ckpt", build(MICRO, 0))
    raw = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(BadMagicError):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "ver.ckpt").write_bytes(raw[:8] + (ck.VERSION + 1).to_bytes(4, "little") + raw[12:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "ver.ckpt")
    for cut in (4, 10, len(raw) // 2, len(raw) - 1):
        (tmp_path / "trunc.ckpt").write_bytes(raw[:cut])
        with pytest.raises(TruncatedCheckpointError):
            load_checkpoint(tmp_path / "trunc.ckpt")


def test_checkpoint_is_little_endian_f32(tmp_path):
    p = build(MICRO, 0)
    save_checkpoint(tmp_path / "c.ckpt", p)
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:8] == ck.MAGIC
    w = p.head1.weight.data
    assert w.astype("<f4").tobytes() in raw


# determinism -----------------------------------------------------------------------

def toy_run(image_dir, path, iters, stop=None, resume=None):
    cfg = TrainConfig(total_iterations=iters, batch=2, patch=24, schedule=Schedule("step", 1e-3, period=iters),
                      seed=5, log_every=1)
    images = load_dataset(image_dir)
    if resume is None:
        params, state, start = build(MICRO, cfg.seed), None, 0
    else:
        c = load_checkpoint(resume)
        params, state, start = restore_params(c), c.optimizer, c.iteration
    stream = training_stream(images, patch=cfg.patch, batch=cfg.batch, rng=Rng(cfg.seed), start=start)
    return train(params, stream, cfg, state=state, start=start, checkpoint_path=path, stop=stop)


def test_identical_runs_give_identical_checkpoint_bytes(image_dir, tmp_path):
    toy_run(image_dir, tmp_path / "a.ckpt", 6)
    toy_run(image_dir, tmp_path / "b.ckpt", 6)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_reproduces_uninterrupted_run(image_dir, tmp_path):
    full = toy_run(image_dir, tmp_path / "full.ckpt", 6)
    toy_run(image_dir, tmp_path / "half.ckpt", 6, stop=3)
    assert load_checkpoint(tmp_path / "half.ckpt").iteration == 3
    resumed = toy_run(image_dir, tmp_path / "resumed.ckpt", 6, resume=tmp_path / "half.ckpt")
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "resumed.ckpt").read_bytes()
    assert [r[1] for r in full.log[3:]] == [r[1] for r in resumed.log]

"""Adam, learning-rate schedules and the two-stage training loop."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import OptimizerState, save_checkpoint
from .losses import LossConfig, total_loss
from .network import ModelParams, forward, named_parameters, zero_grad

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"loss became {value} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


@dataclass(frozen=True)
class Schedule:
    """``step``: lr_init * 0.5**floor(it/period).
    ``cosine``: lr_min + (lr_init-lr_min)/2 * (1 + cos(pi*it/horizon)), held at lr_min after the horizon.
    """

    kind: str = "step"
    lr_init: float = 1e-4
    period: int = 100_000
    lr_min: float = 1e-6
    horizon: int = 500_000

    def __post_init__(self):
        if self.kind not in ("step", "cosine"):
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.lr_init <= 0 or self.lr_min <= 0 or self.period <= 0 or self.horizon <= 0:
            raise ValueError("schedule rates, period and horizon must be positive")


def lr_at(schedule: Schedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if schedule.kind == "step":
        return schedule.lr_init * 0.5 ** (iteration // schedule.period)
    t = min(iteration, schedule.horizon) / schedule.horizon
    return schedule.lr_min + 0.5 * (schedule.lr_init - schedule.lr_min) * (1 + math.cos(math.pi * t))


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 500_000
    batch: int = 4
    patch: int = 128
    schedule: Schedule = Schedule()
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = LossConfig()
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.total_iterations < 1 or self.batch < 1 or self.patch < 1:
            raise ValueError("iterations, batch and patch must be positive")
        if self.schedule.kind == "step" and self.schedule.period > self.total_iterations:
            raise ValueError(f"step period {self.schedule.period} exceeds total iterations {self.total_iterations}")

    @classmethod
    def synthetic(cls, **overrides) -> "TrainConfig":
        """AWGN training: MSE, lr 1e-4 halved every 1e5 of 5e5 iterations."""
        return dataclasses.replace(cls(), **overrides)

    @classmethod
    def real(cls, dataset_patches: int, epochs: int = 120, batch: int = 4, **overrides) -> "TrainConfig":
        """Real-noise training: Charbonnier+edge, cosine 2e-4 -> 1e-6 over ``epochs`` passes."""
        total = epochs * math.ceil(dataset_patches / batch)
        base = cls(
            total_iterations=total,
            batch=batch,
            schedule=Schedule("cosine", lr_init=2e-4, lr_min=1e-6, horizon=total),
            loss=LossConfig("charbonnier_edge"),
        )
        return dataclasses.replace(base, **overrides)


def init_optimizer(params: ModelParams) -> OptimizerState:
    state = OptimizerState()
    for name, t in named_parameters(params):
        state.m[name] = np.zeros_like(t.data)
        state.v[name] = np.zeros_like(t.data)
    return state


def adam_step(params: ModelParams, grads: dict, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update in place; ``grads`` maps name -> array (None = zero)."""
    state.t += 1
    t = state.t
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in named_parameters(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} / moment {state.m[name].shape} vs parameter {p.shape}")
        dt = p.data.dtype.type
        m, v = state.m[name], state.v[name]
        m *= dt(beta1)
        m += dt(1 - beta1) * g
        v *= dt(beta2)
        v += dt(1 - beta2) * g * g
        p.data -= dt(lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(eps))


def train_step(params: ModelParams, noisy, clean, cfg: TrainConfig, state: OptimizerState, iteration: int) -> float:
    zero_grad(params)
    x1, x2 = forward(params, noisy)
    loss = total_loss(x1, x2, clean, cfg.loss)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(iteration, value)
    loss.backward()
    grads = {n: t.grad for n, t in named_parameters(params)}
    adam_step(params, grads, state, lr_at(cfg.schedule, iteration), cfg.beta1, cfg.beta2, cfg.adam_eps)
    return value


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    iteration: int
    log: list = field(default_factory=list)


def train(params: ModelParams, stream, cfg: TrainConfig, state: OptimizerState | None = None,
          start: int = 0, log_path=None, checkpoint_path=None, stop: int | None = None,
          meta: dict | None = None) -> TrainResult:
    """Run iterations ``start`` .. ``stop`` (default ``cfg.total_iterations``).

    ``stream`` must yield the batch for ``start`` first.  Log records are
    (iteration, loss, lr); when ``log_path`` is given they are appended there as
    comma-separated lines.
    """
    state = state or init_optimizer(params)
    stop = cfg.total_iterations if stop is None else stop
    records = []
    logf = open(log_path, "a") if log_path else None
    it = start
    try:
        for it in range(start, stop):
            noisy, clean = next(stream)
            lr = lr_at(cfg.schedule, it)
            value = train_step(params, noisy, clean, cfg, state, it)
            if cfg.log_every and (it % cfg.log_every == 0 or it == stop - 1):
                records.append((it, value, lr))
                log.info("iter %d loss %.6g lr %.3g", it, value, lr)
                if logf:
                    logf.write(f"{it},{value:.9g},{lr:.9g}\n")
                    logf.flush()
            if checkpoint_path and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, params, state, it + 1, {"seed": cfg.seed}, meta)
        it = stop
    finally:
        if logf:
            logf.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, state, it, {"seed": cfg.seed}, meta)
    return TrainResult(params, state, it, records)


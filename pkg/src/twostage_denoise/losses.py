"""Training objectives: per-stage MSE, and Charbonnier plus Laplacian edge loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _make,
    add,
    add_scalar,
    mean_all,
    mean_batch,
    pad,
    scale,
    sqrt,
    square,
    sub,
    sum_per_sample,
)

LAPLACIAN_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(frozen=True)
class LossConfig:
    mode: str = "mse"
    epsilon: float = 1e-3
    lambda_edge: float = 0.1

    def __post_init__(self):
        if self.mode not in ("mse", "charbonnier_edge"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.lambda_edge < 0:
            raise ValueError("lambda_edge must be non-negative")


def _check(x: Tensor, gt: Tensor, name: str):
    if x.shape != gt.shape:
        raise ShapeError(f"{name}: prediction {x.shape} and target {gt.shape} differ")


def mse_loss(x: Tensor, gt: Tensor) -> Tensor:
    _check(x, gt, "mse_loss")
    return mean_all(square(sub(x, gt)))


def laplacian(x: Tensor) -> Tensor:
    """4-neighbour Laplacian per channel with reflect padding; shape preserved."""
    h, w = x.shape[2:]
    xp = pad(x, 1, 1, 1, 1, mode="reflect")
    d = xp.data
    out = d[:, :, :-2, 1:-1] + d[:, :, 2:, 1:-1] + d[:, :, 1:-1, :-2] + d[:, :, 1:-1, 2:] - 4 * d[:, :, 1:-1, 1:-1]

    def bw(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        gp[:, :, :-2, 1:-1] += g
        gp[:, :, 2:, 1:-1] += g
        gp[:, :, 1:-1, :-2] += g
        gp[:, :, 1:-1, 2:] += g
        gp[:, :, 1:-1, 1:-1] -= 4 * g
        return (gp,)

    return _make(out, (xp,), bw, "laplacian")


def _charbonnier(d: Tensor, eps: float) -> Tensor:
    # root of the per-sample squared norm, then mean over the batch
    return mean_batch(sqrt(add_scalar(sum_per_sample(square(d)), eps * eps)))


def charbonnier_edge_loss(x: Tensor, gt: Tensor, cfg: LossConfig = LossConfig("charbonnier_edge")) -> Tensor:
    _check(x, gt, "charbonnier_edge_loss")
    char = _charbonnier(sub(x, gt), cfg.epsilon)
    edge = _charbonnier(sub(laplacian(x), laplacian(gt)), cfg.epsilon)
    return add(char, scale(edge, cfg.lambda_edge))


def stage_loss(x: Tensor, gt: Tensor, cfg: LossConfig) -> Tensor:
    if cfg.mode == "mse":
        return mse_loss(x, gt)
    return charbonnier_edge_loss(x, gt, cfg)


def total_loss(x1: Tensor, x2: Tensor, gt: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum of the configured per-stage loss over both stage outputs."""
    _check(x1, gt, "total_loss")
    _check(x2, gt, "total_loss")
    return add(stage_loss(x1, gt, cfg), stage_loss(x2, gt, cfg))

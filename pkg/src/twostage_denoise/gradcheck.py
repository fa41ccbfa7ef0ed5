"""Finite-difference verification of every differentiable operation.

Each case builds small float64 inputs, reduces the op output to a scalar via a
fixed random projection, and compares the tape gradient of every input against
central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks, losses
from . import tensor as T
from .conv import ConvParams, conv2d, conv_transpose2d
from .network import ModelConfig, build, forward, named_parameters

TOLERANCE = 1e-4
# denominators below this are treated as this (absolute floor for near-zero gradients)
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    n_skipped: int = 0

    @property
    def ok(self) -> bool:
        # an all-skipped case proves nothing
        return self.max_rel_error < TOLERANCE and self.n_checked > 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def check(name, fn, inputs, seed=0, h=1e-4, max_elems=None) -> GradCheckResult:
    """Compare backward of ``sum(fn(*inputs) * R)`` with central differences.

    Entries whose +-h perturbation flips a ReLU mask or a max index are
    skipped (and counted): the function is not differentiable across the
    step there, so the central difference is not an oracle for it.
    ``max_elems`` limits how many entries of each input are perturbed (chosen
    at random, seeded) to bound the cost on large parameter sets.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    proj = T.Tensor(rng.standard_normal(out.shape))

    def scalar():
        return T.sum_all(T.mul(fn(*inputs), proj))

    def probe():
        with T.record_branches() as br:
            v = scalar().item()
        return v, br

    for x in inputs:
        x.grad = None
    scalar().backward()
    with T.no_grad():
        _, base = probe()
    worst, count, skipped = 0.0, 0, 0
    for x in inputs:
        if not x.requires_grad:
            continue
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = np.sort(rng.choice(flat.size, max_elems, replace=False))
        step = h * max(1.0, float(np.max(np.abs(flat))))
        keep, num = [], []
        with T.no_grad():
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp, bp = probe()
                flat[i] = orig - step
                fm, bm = probe()
                flat[i] = orig
                if not (_same_branches(bp, base) and _same_branches(bm, base)):
                    skipped += 1
                    continue
                keep.append(i)
                num.append((fp - fm) / (2 * step))
        worst = max(worst, relative_error(analytic.reshape(-1)[keep], np.array(num)))
        count += len(keep)
    return GradCheckResult(name, worst, count, skipped)


def _t(rng, *shape, low=None, kinkfree=False):
    a = rng.standard_normal(shape)
    if kinkfree:
        # keep values away from zero so ReLU kinks are not straddled
        a = np.sign(a) * (0.1 + np.abs(a))
    if low is not None:
        a = low + np.abs(a)
    return T.Tensor(a, requires_grad=True)


def _conv(rng, cin, cout, k, **geom):
    kh, kw = (k, k) if isinstance(k, int) else k
    return ConvParams(_t(rng, cout, cin, kh, kw), _t(rng, cout), **geom)


def _cases(rng):
    c = []
    x = _t(rng, 2, 3, 6, 6)
    for path in ("direct", "im2col"):
        for geom in ({"padding": 1}, {"stride": 2, "padding": 1}, {"dilation": 2, "padding": 2},
                     {"padding": 1, "padding_mode": "reflect"}):
            p = _conv(rng, 3, 2, 3, **geom)
            tag = ",".join(f"{k}={v}" for k, v in geom.items())
            c.append((f"conv2d[{path};{tag}]", lambda x, w, b, p=p, path=path: conv2d(x, _rebind(p, w, b), path), [x, p.weight, p.bias]))
    pt = _conv(rng, 3, 2, 2, stride=2)
    c.append(("conv_transpose2d[2x2,s2]", lambda x, w, b: conv_transpose2d(x, _rebind(pt, w, b)), [_t(rng, 2, 3, 3, 3), pt.weight, pt.bias]))
    pt3 = _conv(rng, 3, 2, 3, stride=2, dilation=2, padding=1)
    c.append(("conv_transpose2d[3x3,s2,d2,p1]", lambda x, w, b: conv_transpose2d(x, _rebind(pt3, w, b)), [_t(rng, 1, 3, 3, 3), pt3.weight, pt3.bias]))
    c.append(("relu", T.relu, [_t(rng, 2, 3, 6, 6, kinkfree=True)]))
    c.append(("sigmoid", T.sigmoid, [_t(rng, 2, 3, 6, 6)]))
    c.append(("concat_channels", lambda a, b: T.concat_channels([a, b]), [_t(rng, 2, 1, 6, 6), _t(rng, 2, 2, 6, 6)]))
    c.append(("add", T.add, [_t(rng, 2, 3, 6, 6), _t(rng, 2, 3, 6, 6)]))
    c.append(("sub", T.sub, [_t(rng, 2, 3, 6, 6), _t(rng, 2, 3, 6, 6)]))
    c.append(("mul", T.mul, [_t(rng, 2, 3, 6, 6), _t(rng, 2, 3, 6, 6)]))
    c.append(("mul_broadcast[N,1,H,W]", T.mul_broadcast, [_t(rng, 2, 3, 6, 6), _t(rng, 2, 1, 6, 6)]))
    c.append(("mul_broadcast[N,C,1,1]", T.mul_broadcast, [_t(rng, 2, 3, 6, 6), _t(rng, 2, 3, 1, 1)]))
    c.append(("scale", lambda a: T.scale(a, -1.7), [_t(rng, 2, 3, 6, 6)]))
    c.append(("add_scalar", lambda a: T.add_scalar(a, 0.3), [_t(rng, 2, 3, 6, 6)]))
    c.append(("square", T.square, [_t(rng, 2, 3, 6, 6)]))
    c.append(("sqrt", T.sqrt, [_t(rng, 2, 3, 6, 6, low=0.5)]))
    c.append(("spatial_gap", T.spatial_gap, [_t(rng, 2, 3, 6, 6)]))
    c.append(("channel_mean", T.channel_mean, [_t(rng, 2, 3, 6, 6)]))
    c.append(("channel_max", T.channel_max, [_t(rng, 2, 3, 6, 6)]))
    c.append(("sum_all", T.sum_all, [_t(rng, 2, 3, 6, 6)]))
    c.append(("mean_all", T.mean_all, [_t(rng, 2, 3, 6, 6)]))
    c.append(("sum_per_sample", T.sum_per_sample, [_t(rng, 2, 3, 6, 6)]))
    c.append(("mean_batch", T.mean_batch, [_t(rng, 2, 1, 1, 1)]))
    c.append(("crop", lambda a: T.crop(a, 4, 5), [_t(rng, 2, 3, 6, 6)]))
    c.append(("pad[zero]", lambda a: T.pad(a, 1, 2, 0, 3), [_t(rng, 2, 3, 6, 6)]))
    c.append(("pad[reflect]", lambda a: T.pad(a, 2, 1, 3, 0, mode="reflect"), [_t(rng, 2, 3, 6, 6)]))
    c.append(("laplacian", losses.laplacian, [_t(rng, 2, 3, 6, 6)]))
    gt = T.Tensor(rng.standard_normal((2, 3, 6, 6)))
    c.append(("mse_loss", lambda a: losses.mse_loss(a, gt), [_t(rng, 2, 3, 6, 6)]))
    ce = losses.LossConfig("charbonnier_edge")
    c.append(("charbonnier_edge_loss", lambda a: losses.charbonnier_edge_loss(a, gt, ce), [_t(rng, 2, 3, 6, 6)]))
    near = T.Tensor(gt.data + 1e-4 * rng.standard_normal(gt.shape), requires_grad=True)
    # the loss curves on the scale of epsilon here, so the step shrinks with it
    c.append(("charbonnier_edge_loss[near x=gt]", lambda a: losses.charbonnier_edge_loss(a, gt, ce), [near], 1e-4 * ce.epsilon))
    return c


def _rebind(p: ConvParams, w, b) -> ConvParams:
    return ConvParams(w, b, p.stride, p.dilation, p.padding, p.padding_mode)


def _module_cases(rng):
    c = []
    width, growth = 3, 2
    rdam_p = blocks.init_rdam(rng, width, growth, dtype=np.float64)
    hdrdam_p = blocks.init_hdrdam(rng, width, growth, ratio=3, dtype=np.float64)
    x = _t(rng, 2, width, 6, 6)

    def module_case(name, fn, p):
        leaves = [t for _, t in named_parameters(p)]
        return (name, lambda x, *_: fn(x, p), [x] + leaves)

    c.append(module_case("dense_block", blocks.dense_block, rdam_p.dense))
    c.append(module_case("hybrid_dilated_dense_block", blocks.hybrid_dilated_dense_block, hdrdam_p.dense))
    c.append(module_case("spatial_attention", blocks.spatial_attention, rdam_p.attention))
    c.append(module_case("channel_attention", blocks.channel_attention, hdrdam_p.attention))
    c.append(module_case("rdam", blocks.rdam, rdam_p))
    c.append(module_case("hdrdam", blocks.hdrdam, hdrdam_p))
    return c


def network_case(seed=0):
    """Whole two-stage network (k=3, m=1, width 8) on a 1x1x6x6 input."""
    cfg = ModelConfig(k=3, m=1, width=8, growth=2)
    params = build(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    y = T.Tensor(rng.random((1, 1, 6, 6)), requires_grad=True)
    leaves = [t for _, t in named_parameters(params)]

    def fn(y, *_):
        x1, x2 = forward(params, y)
        return T.concat_channels([x1, x2])

    return ("network", fn, [y] + leaves)


def run_suite(seed=0, include_network=True, verbose=None):
    """Run every case; returns the list of :class:`GradCheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    cases = _cases(rng) + _module_cases(rng)
    if include_network:
        cases.append(network_case(seed))
    for name, fn, inputs, *step in cases:
        limit = 4 if name == "network" else None
        r = check(name, fn, inputs, seed=seed, h=step[0] if step else 1e-4, max_elems=limit)
        results.append(r)
        if verbose:
            verbose(r)
    return results

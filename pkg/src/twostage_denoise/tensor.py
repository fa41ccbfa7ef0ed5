"""Rank-4 tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a :class:`Tensor` wrapping a numpy
array laid out as (batch, channels, height, width).  Operations that touch a
tensor with ``requires_grad`` record their inputs and a backward closure; the
recorded graph is the gradient tape.  :func:`backward` replays it in exact
reverse execution order.

Precision follows the data: parameters built in float32 train in float32, and
the gradient checks run the very same code on float64 arrays.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "ShapeError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "add",
    "sub",
    "mul",
    "mul_broadcast",
    "scale",
    "add_scalar",
    "square",
    "sqrt",
    "relu",
    "sigmoid",
    "concat_channels",
    "spatial_gap",
    "channel_mean",
    "channel_max",
    "sum_all",
    "mean_all",
    "sum_per_sample",
    "mean_batch",
    "crop",
    "pad",
    "finite_diff_grad",
    "record_branches",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's precondition."""


class GraphError(RuntimeError):
    """Raised when backward is requested on something the tape cannot replay."""


_seq = itertools.count()
_grad_enabled = True
_branch_log = None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def record_branches():
    """Collect the branch taken by every piecewise op (ReLU masks, max indices).

    Two evaluations with equal logs lie on the same smooth piece of the
    function, which is what a central difference needs.
    """
    global _branch_log
    prev = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _not_scalar(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad=False, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The tape is replayed strictly in reverse creation order, each recorded
    operation exactly once.  Repeated calls accumulate.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if not loss.requires_grad:
        raise GraphError(f"tensor {loss!r} is not attached to a gradient tape")
    if grad is None:
        if loss.size != 1:
            raise GraphError(f"backward without an explicit gradient needs a scalar, got shape {loss.shape}")
        grad = np.ones_like(loss.data)

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for t in order:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# elementwise -----------------------------------------------------------------

def _check_same(x: Tensor, y: Tensor, op: str):
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shapes differ, {x.shape} vs {y.shape}")


def add(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "add")
    return _make(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "sub")
    return _make(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    _check_same(x, y, "mul")
    xd, yd = x.data, y.data
    return _make(xd * yd, (x, y), lambda g: (g * yd, g * xd), "mul")


def mul_broadcast(x: Tensor, a: Tensor) -> Tensor:
    """Multiply ``x`` (N,C,H,W) by a gate of shape (N,1,H,W) or (N,C,1,1)."""
    n, c, h, w = x.shape
    if a.shape == (n, 1, h, w):
        axes = (1,)
    elif a.shape == (n, c, 1, 1):
        axes = (2, 3)
    else:
        raise ShapeError(f"mul_broadcast: gate shape {a.shape} does not broadcast against {x.shape}")
    xd, ad = x.data, a.data

    def bw(g):
        return g * ad, (g * xd).sum(axis=axes, keepdims=True)

    return _make(xd * ad, (x, a), bw, "mul_broadcast")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + x.dtype.type(c), (x,), lambda g: (g,), "add_scalar")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2 * g * xd,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2 * out),), "sqrt")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _branch_log is not None:
        _branch_log.append(mask)
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


# structural ------------------------------------------------------------------

def concat_channels(xs) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat_channels: empty input list")
    if len(xs) == 1:
        return xs[0]
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {t.shape} does not match batch/spatial dims of {xs[0].shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=1), tuple(xs), bw, "concat")


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left (h, w) window."""
    H, W = x.shape[2:]
    if h > H or w > W:
        raise ShapeError(f"crop: ({h},{w}) exceeds spatial dims of {x.shape}")
    if (h, w) == (H, W):
        return x

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, :h, :w] = g
        return (full,)

    return _make(x.data[:, :, :h, :w], (x,), bw, "crop")


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.arange(n), (before, after), mode="reflect" if n > 1 else "edge")


def pad(x: Tensor, top: int, bottom: int, left: int, right: int, mode: str = "zero") -> Tensor:
    """Pad the spatial axes with zeros or by mirror reflection (edge excluded)."""
    if top == bottom == left == right == 0:
        return x
    H, W = x.shape[2:]
    if mode == "zero":
        out = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))

        def bw(g):
            return (g[:, :, top:top + H, left:left + W],)

    elif mode == "reflect":
        ih = _reflect_index(H, top, bottom)
        iw = _reflect_index(W, left, right)
        out = x.data[:, :, ih][:, :, :, iw]

        def bw(g):
            gw = np.zeros(g.shape[:3] + (W,), dtype=g.dtype)
            np.add.at(gw, (slice(None), slice(None), slice(None), iw), g)
            gh = np.zeros(x.shape, dtype=g.dtype)
            np.add.at(gh, (slice(None), slice(None), ih), gw)
            return (gh,)

    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    return _make(out, (x,), bw, "pad")


# reductions ------------------------------------------------------------------

def spatial_gap(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    inv = x.dtype.type(1.0 / (h * w))

    def bw(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _make(x.data.mean(axis=(2, 3), keepdims=True), (x,), bw, "spatial_gap")


def channel_mean(x: Tensor) -> Tensor:
    inv = x.dtype.type(1.0 / x.shape[1])

    def bw(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _make(x.data.mean(axis=1, keepdims=True), (x,), bw, "channel_mean")


def channel_max(x: Tensor) -> Tensor:
    # np.argmax picks the first maximum, which fixes the tie rule
    idx = np.argmax(x.data, axis=1)[:, None]
    if _branch_log is not None:
        _branch_log.append(idx)

    def bw(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(out, idx, g, axis=1)
        return (out,)

    return _make(np.take_along_axis(x.data, idx, axis=1), (x,), bw, "channel_max")


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        return (np.full(x.shape, g.reshape(-1)[0], dtype=g.dtype),)

    return _make(x.data.sum().reshape(1, 1, 1, 1), (x,), bw, "sum")


def mean_all(x: Tensor) -> Tensor:
    inv = x.dtype.type(1.0 / x.size)

    def bw(g):
        return (np.full(x.shape, g.reshape(-1)[0] * inv, dtype=g.dtype),)

    return _make((x.data.sum() * inv).reshape(1, 1, 1, 1), (x,), bw, "mean")


def sum_per_sample(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,1,1,1) sum over everything except the batch axis."""
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=(1, 2, 3), keepdims=True), (x,), bw, "sum_per_sample")


def mean_batch(x: Tensor) -> Tensor:
    """(N,1,1,1) -> (1,1,1,1)."""
    inv = x.dtype.type(1.0 / x.shape[0])

    def bw(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _make(x.data.mean(axis=0, keepdims=True), (x,), bw, "mean_batch")


# numeric oracle ----------------------------------------------------------------

def finite_diff_grad(f, x, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` may be a Tensor (perturbed in place and restored) or an array.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(x))
        flat[i] = orig - h
        fm = _scalar(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return float(v.data.reshape(-1)[0])
    return float(np.asarray(v).reshape(-1)[0])

"""2-D convolution and transposed convolution on the gradient tape.

Two numerically equivalent execution paths exist for ``conv2d``:

* ``"direct"`` sums one (out_ch x in_ch) matrix product per kernel tap, taps
  visited row-major (kernel-major accumulation, fixed order);
* ``"im2col"`` gathers all taps into a column matrix and does one product.

The module-level default is chosen by :func:`set_conv_path`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _make, pad

__all__ = [
    "ConvParams",
    "conv2d",
    "conv_transpose2d",
    "conv_output_size",
    "set_conv_path",
    "get_conv_path",
]

_PATHS = ("direct", "im2col")
_default_path = "im2col"


def set_conv_path(path: str) -> None:
    global _default_path
    if path not in _PATHS:
        raise ValueError(f"conv path must be one of {_PATHS}, got {path!r}")
    _default_path = path


def get_conv_path() -> str:
    return _default_path


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass
class ConvParams:
    """Learnable kernel and bias plus geometry of one convolution layer.

    ``weight`` is laid out (out_ch, in_ch, kh, kw) for both ordinary and
    transposed convolutions.
    """

    weight: Tensor
    bias: Tensor
    stride: tuple = (1, 1)
    dilation: tuple = (1, 1)
    padding: tuple = (0, 0)
    padding_mode: str = "zero"

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.dilation = _pair(self.dilation)
        self.padding = _pair(self.padding)
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be rank 4, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match out_ch {self.weight.shape[0]}")
        if min(self.weight.shape[2:]) < 1 or min(self.dilation) < 1 or min(self.stride) < 1:
            raise ValueError("kernel size, stride and dilation must be >= 1")
        if min(self.padding) < 0:
            raise ValueError("padding must be >= 0")
        if self.padding_mode not in ("zero", "reflect"):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> tuple:
        return self.weight.shape[2], self.weight.shape[3]

    def extent(self) -> tuple:
        """Effective kernel footprint (k-1)*r+1 per axis."""
        (kh, kw), (dh, dw) = self.kernel_size, self.dilation
        return (kh - 1) * dh + 1, (kw - 1) * dw + 1

    def parameters(self):
        return [self.weight, self.bias]

    def num_params(self) -> int:
        return self.weight.size + self.bias.size


def conv_output_size(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - ((k - 1) * dilation + 1)) // stride + 1


def _tap(arr, i, j, dh, dw, sh, sw, ho, wo):
    """View of ``arr`` sampled by kernel tap (i, j)."""
    return arr[:, :, i * dh:i * dh + sh * (ho - 1) + 1:sh, j * dw:j * dw + sw * (wo - 1) + 1:sw]


def _conv_direct(xp, w, stride, dilation, ho, wo):
    n, cin = xp.shape[:2]
    cout, _, kh, kw = w.shape
    (sh, sw), (dh, dw) = stride, dilation
    out = np.zeros((n, cout, ho * wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(_tap(xp, i, j, dh, dw, sh, sw, ho, wo)).reshape(n, cin, ho * wo)
            out += np.matmul(w[:, :, i, j], patch)
    return out.reshape(n, cout, ho, wo)


def _conv_direct_backward(g, xp, w, stride, dilation):
    n, cout, ho, wo = g.shape
    cin, kh, kw = w.shape[1:]
    (sh, sw), (dh, dw) = stride, dilation
    g2 = g.reshape(n, cout, ho * wo)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            patch = np.ascontiguousarray(_tap(xp, i, j, dh, dw, sh, sw, ho, wo)).reshape(n, cin, ho * wo)
            gw[:, :, i, j] = np.einsum("nop,ncp->oc", g2, patch, optimize=True)
            _tap(gxp, i, j, dh, dw, sh, sw, ho, wo)[...] += np.matmul(w[:, :, i, j].T, g2).reshape(n, cin, ho, wo)
    return gxp, gw


def _im2col(xp, kh, kw, stride, dilation, ho, wo):
    """(cin, H, W) -> (cin*kh*kw, ho*wo) column matrix for one sample."""
    cin = xp.shape[0]
    (sh, sw), (dh, dw) = stride, dilation
    win = sliding_window_view(xp, ((kh - 1) * dh + 1, (kw - 1) * dw + 1), axis=(1, 2))
    win = win[:, ::sh, ::sw, ::dh, ::dw][:, :ho, :wo]
    # (cin, ho, wo, kh, kw) -> (cin, kh, kw, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(cin * kh * kw, ho * wo)


# columns are rebuilt per sample in backward instead of being kept alive
def _conv_im2col(xp, w, stride, dilation, ho, wo):
    cout, cin, kh, kw = w.shape
    w2 = w.reshape(cout, -1)
    out = np.empty((xp.shape[0], cout, ho * wo), dtype=xp.dtype)
    for n in range(xp.shape[0]):
        np.matmul(w2, _im2col(xp[n], kh, kw, stride, dilation, ho, wo), out=out[n])
    return out.reshape(xp.shape[0], cout, ho, wo)


def _conv_im2col_backward(g, xp, w, stride, dilation):
    n_, cout, ho, wo = g.shape
    cin, kh, kw = w.shape[1:]
    (sh, sw), (dh, dw) = stride, dilation
    w2t = w.reshape(cout, -1).T
    gw = np.zeros((cout, cin * kh * kw), dtype=w.dtype)
    gxp = np.zeros_like(xp)
    for n in range(n_):
        g2 = g[n].reshape(cout, ho * wo)
        gw += g2 @ _im2col(xp[n], kh, kw, stride, dilation, ho, wo).T
        gcols = (w2t @ g2).reshape(cin, kh, kw, ho, wo)
        gx = gxp[n]
        for i in range(kh):
            for j in range(kw):
                gx[:, i * dh:i * dh + sh * (ho - 1) + 1:sh, j * dw:j * dw + sw * (wo - 1) + 1:sw] += gcols[:, i, j]
    return gxp, gw.reshape(w.shape)


def conv2d(x: Tensor, p: ConvParams, path: str | None = None) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``p``; returns (N,out_ch,H',W')."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    if x.shape[1] != p.in_ch:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but kernel {p.weight.shape} expects {p.in_ch}")
    path = path or _default_path
    if path not in _PATHS:
        raise ValueError(f"unknown conv path {path!r}")
    kh, kw = p.kernel_size
    ho = conv_output_size(x.shape[2], kh, p.stride[0], p.dilation[0], p.padding[0])
    wo = conv_output_size(x.shape[3], kw, p.stride[1], p.dilation[1], p.padding[1])
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: non-positive output size ({ho},{wo}) for input {x.shape}, kernel {p.weight.shape}, "
            f"stride {p.stride}, dilation {p.dilation}, padding {p.padding}"
        )
    ph, pw = p.padding
    xpad = pad(x, ph, ph, pw, pw, mode=p.padding_mode)
    xp, w, b = xpad.data, p.weight.data, p.bias.data

    if path == "direct":
        out = _conv_direct(xp, w, p.stride, p.dilation, ho, wo)

        def bw(g):
            gxp, gw = _conv_direct_backward(g, xp, w, p.stride, p.dilation)
            return gxp, gw, g.sum(axis=(0, 2, 3))
    else:
        out = _conv_im2col(xp, w, p.stride, p.dilation, ho, wo)

        def bw(g):
            gxp, gw = _conv_im2col_backward(g, xp, w, p.stride, p.dilation)
            return gxp, gw, g.sum(axis=(0, 2, 3))

    out += b.reshape(1, -1, 1, 1)
    return _make(out, (xpad, p.weight, p.bias), bw, "conv2d")


def conv_transpose2d(x: Tensor, p: ConvParams) -> Tensor:
    """Adjoint-geometry convolution; a 2x2 stride-2 kernel doubles H and W."""
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects a rank-4 input, got shape {x.shape}")
    if x.shape[1] != p.in_ch:
        raise ShapeError(
            f"conv_transpose2d: input has {x.shape[1]} channels but kernel {p.weight.shape} expects {p.in_ch}"
        )
    if p.padding_mode != "zero":
        raise ValueError("conv_transpose2d supports zero padding only")
    n, cin, h, w_ = x.shape
    cout, _, kh, kw = p.weight.shape
    (sh, sw), (dh, dw), (ph, pw) = p.stride, p.dilation, p.padding
    hf = (h - 1) * sh + (kh - 1) * dh + 1
    wf = (w_ - 1) * sw + (kw - 1) * dw + 1
    ho, wo = hf - 2 * ph, wf - 2 * pw
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: non-positive output size ({ho},{wo}) for input {x.shape}")
    xd, w, b = x.data, p.weight.data, p.bias.data
    x2 = xd.reshape(n, cin, h * w_)
    full = np.zeros((n, cout, hf, wf), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            _tap(full, i, j, dh, dw, sh, sw, h, w_)[...] += np.matmul(w[:, :, i, j], x2).reshape(n, cout, h, w_)
    out = full[:, :, ph:ph + ho, pw:pw + wo] + b.reshape(1, -1, 1, 1)

    def bw(g):
        gfull = np.zeros((n, cout, hf, wf), dtype=g.dtype)
        gfull[:, :, ph:ph + ho, pw:pw + wo] = g
        gx = np.zeros((n, cin, h * w_), dtype=g.dtype)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                gt = _tap(gfull, i, j, dh, dw, sh, sw, h, w_).reshape(n, cout, h * w_)
                gx += np.matmul(w[:, :, i, j].T, gt)
                gw[:, :, i, j] = np.einsum("nop,ncp->oc", gt, x2, optimize=True)
        return gx.reshape(x.shape), gw, g.sum(axis=(0, 2, 3))

    return _make(np.ascontiguousarray(out), (x, p.weight, p.bias), bw, "conv_transpose2d")

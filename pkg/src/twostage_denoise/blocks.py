"""Dense blocks, attention gates and the two residual attention modules.

RDAM   = spatial_attention(dense_block(x)) + x
HDRDAM = channel_attention(hybrid_dilated_dense_block(x)) + x
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import ConvParams, conv2d
from .tensor import (
    ShapeError,
    Tensor,
    add,
    channel_max,
    channel_mean,
    concat_channels,
    mul_broadcast,
    relu,
    sigmoid,
    spatial_gap,
)

N_DENSE_LAYERS = 8
DEFAULT_DILATIONS = (1, 2, 3, 4, 4, 3, 2, 1)


def init_conv(rng, in_ch, out_ch, k, *, stride=1, dilation=1, padding=0, dtype=np.float32) -> ConvParams:
    """Fan-in scaled uniform weights, zero bias."""
    kh, kw = (k, k) if isinstance(k, int) else k
    bound = 1.0 / np.sqrt(in_ch * kh * kw)
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, kh, kw)).astype(dtype)
    return ConvParams(
        Tensor(w, requires_grad=True),
        Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True),
        stride=stride,
        dilation=dilation,
        padding=padding,
    )


@dataclass
class DenseBlockParams:
    layers: list
    fusion: ConvParams
    growth: int

    @property
    def width(self) -> int:
        return self.fusion.out_ch

    @property
    def dilations(self) -> tuple:
        return tuple(l.dilation[0] for l in self.layers)


# the hybrid dilated block has the same record layout, only the rates differ
HybridDilatedDenseBlockParams = DenseBlockParams


@dataclass
class SpatialAttentionParams:
    conv: ConvParams


@dataclass
class ChannelAttentionParams:
    reduce: ConvParams
    expand: ConvParams

    @property
    def ratio(self) -> int:
        return self.reduce.in_ch // self.reduce.out_ch


@dataclass
class RDAMParams:
    dense: DenseBlockParams
    attention: SpatialAttentionParams


@dataclass
class HDRDAMParams:
    dense: DenseBlockParams
    attention: ChannelAttentionParams


def init_dense_block(rng, width, growth, dilations=None, dtype=np.float32) -> DenseBlockParams:
    dilations = tuple(dilations) if dilations is not None else (1,) * N_DENSE_LAYERS
    if len(dilations) != N_DENSE_LAYERS:
        raise ValueError(f"need {N_DENSE_LAYERS} dilation rates, got {len(dilations)}")
    if any(r not in (1, 2, 3, 4) for r in dilations):
        raise ValueError(f"dilation rates must lie in [1, 4], got {dilations}")
    layers = [
        init_conv(rng, width + i * growth, growth, 3, dilation=r, padding=r, dtype=dtype)
        for i, r in enumerate(dilations)
    ]
    fusion = init_conv(rng, width + N_DENSE_LAYERS * growth, width, 1, dtype=dtype)
    return DenseBlockParams(layers, fusion, growth)


def init_spatial_attention(rng, dtype=np.float32) -> SpatialAttentionParams:
    return SpatialAttentionParams(init_conv(rng, 2, 1, 7, padding=3, dtype=dtype))


def init_channel_attention(rng, width, ratio=8, dtype=np.float32) -> ChannelAttentionParams:
    if ratio < 1 or width % ratio:
        raise ValueError(f"channel count {width} is not divisible by reduction ratio {ratio}")
    hidden = width // ratio
    return ChannelAttentionParams(
        init_conv(rng, width, hidden, 1, dtype=dtype),
        init_conv(rng, hidden, width, 1, dtype=dtype),
    )


def init_rdam(rng, width, growth, dtype=np.float32) -> RDAMParams:
    return RDAMParams(init_dense_block(rng, width, growth, dtype=dtype), init_spatial_attention(rng, dtype))


def init_hdrdam(rng, width, growth, dilations=DEFAULT_DILATIONS, ratio=8, dtype=np.float32) -> HDRDAMParams:
    return HDRDAMParams(
        init_dense_block(rng, width, growth, dilations, dtype=dtype),
        init_channel_attention(rng, width, ratio, dtype),
    )


def dense_block(x: Tensor, p: DenseBlockParams) -> Tensor:
    if x.shape[1] != p.width:
        raise ShapeError(f"dense block of width {p.width} got input with {x.shape[1]} channels")
    feats = [x]
    for layer in p.layers:
        feats.append(relu(conv2d(concat_channels(feats), layer)))
    return conv2d(concat_channels(feats), p.fusion)


def hybrid_dilated_dense_block(x: Tensor, p: DenseBlockParams) -> Tensor:
    # dilation and matching padding live in the layer records
    return dense_block(x, p)


def spatial_attention_map(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    pooled = concat_channels([channel_mean(x), channel_max(x)])
    return sigmoid(conv2d(pooled, p.conv))


def spatial_attention(x: Tensor, p: SpatialAttentionParams) -> Tensor:
    return mul_broadcast(x, spatial_attention_map(x, p))


def channel_attention_vector(x: Tensor, p: ChannelAttentionParams) -> Tensor:
    if x.shape[1] != p.reduce.in_ch:
        raise ShapeError(f"channel attention built for {p.reduce.in_ch} channels got {x.shape[1]}")
    return sigmoid(conv2d(relu(conv2d(spatial_gap(x), p.reduce)), p.expand))


def channel_attention(x: Tensor, p: ChannelAttentionParams) -> Tensor:
    return mul_broadcast(x, channel_attention_vector(x, p))


def rdam(x: Tensor, p: RDAMParams) -> Tensor:
    return add(spatial_attention(dense_block(x, p.dense), p.attention), x)


def hdrdam(x: Tensor, p: HDRDAMParams) -> Tensor:
    return add(channel_attention(hybrid_dilated_dense_block(x, p.dense), p.attention), x)

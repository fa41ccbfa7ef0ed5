"""The two-stage denoiser: an RDAM encoder-decoder followed by a flat HDRDAM chain.

Stage 1 (width doubles on every strided conv)::

    f   = head1(y);  a = SAB(f)
    e0  = RDAM(a);  e_l = RDAM(SConv_l(e_{l-1}))        l = 1..m
    b   = extra RDAMs at the innermost level             (k - 2m - 1 of them)
    d   = RDAM(TConv_l(d) + e_{l-1})                     l = m..1
    x1  = tail1(d + f)

Stage 2 repeats the skip pattern at full resolution without resampling and
is seeded with the last stage-1 feature map::

    f   = head2(y);  e0 = HDRDAM(CAB(f) + d_stage1) ...  x2 = tail2(d + f)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import blocks
from .blocks import (
    ChannelAttentionParams,
    SpatialAttentionParams,
    channel_attention,
    hdrdam,
    init_channel_attention,
    init_conv,
    init_hdrdam,
    init_rdam,
    init_spatial_attention,
    rdam,
    spatial_attention,
)
from .conv import ConvParams, conv2d, conv_transpose2d
from .tensor import ShapeError, Tensor, add, crop, pad


@dataclass(frozen=True)
class ModelConfig:
    k: int = 5
    m: int = 2
    width: int = 64
    image_channels: int = 1
    growth: int = 32
    dilations: tuple = blocks.DEFAULT_DILATIONS
    ca_ratio: int = 8
    channel_policy: str = "double"

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(r) for r in self.dilations))
        self.validate()

    def validate(self):
        if self.k < 1 or self.m < 0:
            raise ValueError(f"need k >= 1 and m >= 0, got k={self.k}, m={self.m}")
        if self.k < 2 * self.m + 1:
            raise ValueError(f"k={self.k} modules cannot hold m={self.m} down/up pairs (need k >= 2m+1)")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.width < 1 or self.growth < 1:
            raise ValueError("width and growth must be positive")
        if self.channel_policy not in ("double", "constant"):
            raise ValueError(f"unknown channel policy {self.channel_policy!r}")
        if self.width % self.ca_ratio:
            raise ValueError(f"width {self.width} is not divisible by channel attention ratio {self.ca_ratio}")
        if len(self.dilations) != blocks.N_DENSE_LAYERS or any(r not in (1, 2, 3, 4) for r in self.dilations):
            raise ValueError(f"dilation pattern must be {blocks.N_DENSE_LAYERS} rates in [1, 4], got {self.dilations}")

    def level_width(self, level: int) -> int:
        return self.width * 2 ** level if self.channel_policy == "double" else self.width

    @property
    def extra_modules(self) -> int:
        return self.k - 2 * self.m - 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if k == "dilations" else v) for k, v in d.items() if k in known})


@dataclass
class ModelParams:
    config: ModelConfig
    head1: ConvParams
    tail1: ConvParams
    head2: ConvParams
    tail2: ConvParams
    sab0: SpatialAttentionParams
    cab0: ChannelAttentionParams
    rdams: list = field(default_factory=list)
    sconvs: list = field(default_factory=list)
    tconvs: list = field(default_factory=list)
    hdrdams: list = field(default_factory=list)

    @property
    def dtype(self):
        return self.head1.weight.dtype


def named_parameters(obj, prefix: str = ""):
    """Yield (dotted_name, Tensor) for every learnable array, in a fixed order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif isinstance(obj, ConvParams):
        yield f"{prefix}.weight", obj.weight
        yield f"{prefix}.bias", obj.bias
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, (Tensor, ConvParams, list)) or dataclasses.is_dataclass(value):
                if isinstance(value, ModelConfig):
                    continue
                yield from named_parameters(value, f"{prefix}.{f.name}" if prefix else f.name)


def parameters(obj) -> list:
    return [t for _, t in named_parameters(obj)]


def param_count(obj) -> int:
    """Number of scalar learnable values."""
    return int(sum(t.size for t in parameters(obj)))


def zero_grad(obj) -> None:
    for t in parameters(obj):
        t.grad = None


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Randomly initialised parameters; identical seeds give identical arrays."""
    config.validate()
    rng = np.random.default_rng(seed)
    c, g, ch = config.width, config.growth, config.image_channels
    head1 = init_conv(rng, ch, c, 3, padding=1, dtype=dtype)
    sab0 = init_spatial_attention(rng, dtype)

    # stage-1 module levels in execution order
    levels = [0] + list(range(1, config.m + 1)) + [config.m] * config.extra_modules + list(range(config.m - 1, -1, -1))
    rdams = [init_rdam(rng, config.level_width(l), g, dtype) for l in levels]
    sconvs = [
        init_conv(rng, config.level_width(l - 1), config.level_width(l), 2, stride=2, dtype=dtype)
        for l in range(1, config.m + 1)
    ]
    tconvs = [
        init_conv(rng, config.level_width(l), config.level_width(l - 1), 2, stride=2, dtype=dtype)
        for l in range(1, config.m + 1)
    ]
    tail1 = init_conv(rng, c, ch, 3, padding=1, dtype=dtype)

    head2 = init_conv(rng, ch, c, 3, padding=1, dtype=dtype)
    cab0 = init_channel_attention(rng, c, config.ca_ratio, dtype)
    hdrdams = [init_hdrdam(rng, c, g, config.dilations, config.ca_ratio, dtype) for _ in range(config.k)]
    tail2 = init_conv(rng, c, ch, 3, padding=1, dtype=dtype)
    return ModelParams(config, head1, tail1, head2, tail2, sab0, cab0, rdams, sconvs, tconvs, hdrdams)


def _encoder_decoder(x, modules, module_fn, down=None, up=None, m=0):
    """Shared skip pattern of both stages; ``down``/``up`` are None at stage 2."""
    it = iter(modules)
    enc = [module_fn(x, next(it))]
    for l in range(m):
        h = enc[-1] if down is None else conv2d(enc[-1], down[l])
        enc.append(module_fn(h, next(it)))
    h = enc[-1]
    for _ in range(len(modules) - 2 * m - 1):
        h = module_fn(h, next(it))
    for l in range(m, 0, -1):
        u = h if up is None else conv_transpose2d(h, up[l - 1])
        h = module_fn(add(u, enc[l - 1]), next(it))
    return h


def stage1_forward(params: ModelParams, y: Tensor):
    """Returns (x1, last RDAM feature map)."""
    m = params.config.m
    if y.shape[2] % 2 ** m or y.shape[3] % 2 ** m:
        raise ShapeError(f"stage 1 needs spatial dims divisible by {2 ** m}, got {y.shape[2:]}")
    f = conv2d(y, params.head1)
    a = spatial_attention(f, params.sab0)
    last = _encoder_decoder(a, params.rdams, rdam, params.sconvs, params.tconvs, m)
    return conv2d(add(last, f), params.tail1), last


def stage2_forward(params: ModelParams, y: Tensor, o_rdam_last: Tensor) -> Tensor:
    f = conv2d(y, params.head2)
    if o_rdam_last.shape != f.shape:
        raise ShapeError(f"cross-stage skip: stage-1 features {o_rdam_last.shape} vs stage-2 features {f.shape}")
    a = add(channel_attention(f, params.cab0), o_rdam_last)
    last = _encoder_decoder(a, params.hdrdams, hdrdam, m=params.config.m)
    return conv2d(add(last, f), params.tail2)


def forward(params: ModelParams, y: Tensor):
    """Denoise ``y``; returns (x1, x2) with x2 the final estimate.

    Inputs of any size are reflect-padded to a multiple of 2**m and the
    outputs cropped back.
    """
    if y.shape[1] != params.config.image_channels:
        raise ShapeError(f"model expects {params.config.image_channels} image channels, got {y.shape[1]}")
    h, w = y.shape[2:]
    mult = 2 ** params.config.m
    yp = pad(y, 0, -h % mult, 0, -w % mult, mode="reflect")
    x1, last = stage1_forward(params, yp)
    x2 = stage2_forward(params, yp, last)
    return crop(x1, h, w), crop(x2, h, w)

"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"TSDNCKPT"
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON
              (model config, iteration, rng state, optimizer step, ...)
    u32       number of array records, then per record:
              u16 name length, name, u8 ndim, ndim x u32 dims,
              prod(dims) float32 values

Optimizer moments are stored as records named ``adam.m.<param>`` and
``adam.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import ModelConfig, ModelParams, build, named_parameters

MAGIC = b"TSDNCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict
    optimizer: OptimizerState | None = None
    iteration: int = 0
    rng: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def param_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))


def _write_array(buf: list, name: str, arr: np.ndarray):
    raw = name.encode()
    buf.append(struct.pack("<H", len(raw)) + raw)
    buf.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, params: ModelParams, optimizer: OptimizerState | None = None,
                    iteration: int = 0, rng: dict | None = None, meta: dict | None = None) -> None:
    named = list(named_parameters(params))
    header = {
        "config": params.config.to_dict(),
        "iteration": int(iteration),
        "rng": rng or {},
        "meta": meta or {},
        "has_optimizer": optimizer is not None,
        "adam_t": optimizer.t if optimizer is not None else 0,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    records = [(n, t.data) for n, t in named]
    if optimizer is not None:
        records += [(f"adam.m.{n}", optimizer.m[n]) for n, _ in named]
        records += [(f"adam.v.{n}", optimizer.v[n]) for n, _ in named]
    buf = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(records))]
    for n, a in records:
        _write_array(buf, n, a)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(buf))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"{self.path}: file ends after {len(self.data)} bytes, expected more")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    magic = r.data[:len(MAGIC)]
    if len(r.data) >= len(MAGIC) and magic != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (magic {magic!r})")
    r.take(len(MAGIC))
    version, hlen = r.unpack("<II")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint format version {version}, this build reads {VERSION}")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")

    optimizer = None
    if header.get("has_optimizer"):
        optimizer = OptimizerState(t=int(header["adam_t"]))
        for name in list(arrays):
            for key, slot in (("adam.m.", optimizer.m), ("adam.v.", optimizer.v)):
                if name.startswith(key):
                    slot[name[len(key):]] = arrays.pop(name)
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        arrays=arrays,
        optimizer=optimizer,
        iteration=int(header["iteration"]),
        rng=header.get("rng", {}),
        meta=header.get("meta", {}),
    )


def restore_params(ckpt: Checkpoint) -> ModelParams:
    """Model parameters rebuilt from a checkpoint's config and arrays."""
    params = build(ckpt.config, seed=0)
    named = dict(named_parameters(params))
    missing = set(named) - set(ckpt.arrays)
    extra = set(ckpt.arrays) - set(named)
    if missing or extra:
        raise CheckpointError(f"checkpoint does not match its config: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for name, t in named.items():
        arr = ckpt.arrays[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} vs model {t.shape}")
        t.data = arr.copy()
    return params

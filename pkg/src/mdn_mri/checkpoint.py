"""Binary checkpoint format (``MDNC``).

Layout, all integers little-endian::

    b"MDNC"  u32 version  u32 flags
    u32 len  config JSON (utf-8; model config plus free-form metadata)
    u32 n_params
      n_params x (u16 len, name utf-8, u8 ndim, ndim x u32 dims)
    float32 values of every parameter in manifest order
    u32 n_stats
      n_stats x (u16 len, name utf-8, u32 channels)
    float32 running mean then running var of every statistic, in order
    if flags & OPTIMIZER:
      float32 adam_m then adam_v of every parameter, in order
      u64 step_count of every parameter, in order

Values are stored as float32, so a float32 model round-trips bit-exactly.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core.ops import Parameter, RunningStats
from .model import MDN, ModelConfig, parameter_shapes, stat_shapes

MAGIC = b"MDNC"
VERSION = 1
FLAG_OPTIMIZER = 1


class CheckpointError(ValueError):
    pass


class ManifestMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    stats: dict
    moments: dict = None
    step_counts: dict = None
    meta: dict = field(default_factory=dict)

    def to_model(self):
        params = {}
        for name, value in self.params.items():
            p = Parameter(value.copy())
            if self.moments is not None:
                p.adam_m = self.moments[name][0].copy()
                p.adam_v = self.moments[name][1].copy()
                p.step_count = self.step_counts[name]
            params[name] = p
        stats = {n: RunningStats(m.copy(), v.copy()) for n, (m, v) in self.stats.items()}
        return MDN(self.config, params, stats)


def from_model(model, include_optimizer=True, meta=None):
    return Checkpoint(
        config=model.config,
        params={n: p.value for n, p in model.params.items()},
        stats={n: (s.mean, s.var) for n, s in model.stats.items()},
        moments={n: (p.adam_m, p.adam_v) for n, p in model.params.items()}
        if include_optimizer else None,
        step_counts={n: p.step_count for n, p in model.params.items()}
        if include_optimizer else None,
        meta=dict(meta or {}))


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _name(s):
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def dumps(ckpt):
    has_opt = ckpt.moments is not None
    header = json.dumps({"config": ckpt.config.to_dict(), "meta": ckpt.meta},
                        sort_keys=True).encode()
    out = [MAGIC, struct.pack("<III", VERSION, FLAG_OPTIMIZER if has_opt else 0, len(header)),
           header, struct.pack("<I", len(ckpt.params))]
    for name, value in ckpt.params.items():
        out.append(_name(name) + struct.pack("<B", value.ndim)
                   + struct.pack(f"<{value.ndim}I", *value.shape))
    out.extend(_f32(v) for v in ckpt.params.values())
    out.append(struct.pack("<I", len(ckpt.stats)))
    for name, (mean, _) in ckpt.stats.items():
        out.append(_name(name) + struct.pack("<I", mean.size))
    for mean, var in ckpt.stats.values():
        out.append(_f32(mean) + _f32(var))
    if has_opt:
        for name in ckpt.params:
            m, v = ckpt.moments[name]
            out.append(_f32(m) + _f32(v))
        out.append(struct.pack(f"<{len(ckpt.params)}Q",
                               *(ckpt.step_counts[n] for n in ckpt.params)))
    return b"".join(out)


def save_checkpoint(model_or_ckpt, path, include_optimizer=True, meta=None):
    ckpt = model_or_ckpt if isinstance(model_or_ckpt, Checkpoint) else \
        from_model(model_or_ckpt, include_optimizer, meta)
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated payload")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode()

    def floats(self, shape):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)


def loads(raw, expected=None):
    """Parse checkpoint bytes.

    ``expected`` (a :class:`ModelConfig`) makes the load fail with
    :class:`ManifestMismatchError` unless the stored config and parameter
    manifest match it exactly.
    """
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError("corrupt header: bad magic")
    r = _Reader(raw)
    r.take(4)
    version, flags, hlen = r.unpack("<III")
    if version != VERSION:
        raise CheckpointError(f"corrupt header: unsupported version {version}")
    if flags & ~FLAG_OPTIMIZER:
        raise CheckpointError(f"corrupt header: unknown flags {flags:#x}")
    try:
        header = json.loads(r.take(hlen).decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc
    (n_params,) = r.unpack("<I")
    manifest = []
    for _ in range(n_params):
        name = r.name()
        (ndim,) = r.unpack("<B")
        manifest.append((name, tuple(r.unpack(f"<{ndim}I"))))
    if manifest != [(n, tuple(s)) for n, s in parameter_shapes(config)]:
        raise ManifestMismatchError("parameter manifest does not match the stored config")
    if expected is not None:
        want = [(n, tuple(s)) for n, s in parameter_shapes(expected)]
        if expected != config or manifest != want:
            raise ManifestMismatchError(
                f"checkpoint holds variant {config.variant!r} "
                f"({config.num_blocks} blocks, {config.input_channels} channels); "
                f"expected {expected.variant!r} ({expected.num_blocks} blocks, "
                f"{expected.input_channels} channels)")
    params = {name: r.floats(shape) for name, shape in manifest}
    (n_stats,) = r.unpack("<I")
    stat_manifest = [(r.name(), r.unpack("<I")[0]) for _ in range(n_stats)]
    if stat_manifest != stat_shapes(config):
        raise ManifestMismatchError("running-statistics manifest does not match the config")
    stats = {}
    for name, width in stat_manifest:
        stats[name] = (r.floats((width,)), r.floats((width,)))
    moments = step_counts = None
    if flags & FLAG_OPTIMIZER:
        moments = {name: (r.floats(shape), r.floats(shape)) for name, shape in manifest}
        counts = r.unpack(f"<{len(manifest)}Q")
        step_counts = {name: int(c) for (name, _), c in zip(manifest, counts)}
    if r.pos != len(raw):
        raise CheckpointError(f"corrupt payload: {len(raw) - r.pos} trailing bytes")
    return Checkpoint(config, params, stats, moments, step_counts, header.get("meta", {}))


def load_checkpoint(path, expected=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected)


def load_model(path, expected=None):
    return load_checkpoint(path, expected).to_model()

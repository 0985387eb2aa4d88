"""Binary checkpoints: named float32 tensors, bit-exact round trip.

Layout, little-endian throughout: magic ``SEDG``, u32 format version (1),
u32 tensor count, then per tensor a u16 name length, the UTF-8 name, a u8
rank, rank u32 dims, and the raw float32 payload.

Names carry the namespace: ``param:enc1a.w`` for trainable tensors,
``stat:enc1a.mean`` / ``stat:enc1a.var`` for batch-norm buffers, and the
optional optimizer block ``adam:meta`` (step, lr, beta1, beta2, eps) with
``adam:m:<param>`` / ``adam:v:<param>`` moment buffers.

Writes go to a sibling ``.tmp`` file and land via ``os.replace``, so an
interrupted save never clobbers the previous checkpoint.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .autodiff import AdamState, BatchNormStats, Tensor
from .model import _CONV_PLAN, ModelParams

MAGIC = b"SEDG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _expected_shapes() -> dict:
    """Tensor name -> shape for every serialized entry except the adam block."""
    shapes = {}
    for name, cin, cout, k, has_bn in _CONV_PLAN:
        shapes[f"param:{name}.w"] = (cout, cin, k, k)
        shapes[f"param:{name}.b"] = (cout,)
        if has_bn:
            shapes[f"param:{name}.gamma"] = (cout,)
            shapes[f"param:{name}.beta"] = (cout,)
            shapes[f"stat:{name}.mean"] = (cout,)
            shapes[f"stat:{name}.var"] = (cout,)
    return shapes


def _encode_entry(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    if data.ndim > 255:
        raise CheckpointError(f"tensor {name!r} rank {data.ndim} exceeds format limit")
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 0xFFFF:
        raise CheckpointError(f"tensor name too long: {name!r}")
    parts = [struct.pack("<H", len(name_bytes)), name_bytes,
             struct.pack("<B", data.ndim),
             struct.pack(f"<{data.ndim}I", *data.shape)]
    parts.append(data.tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(params: ModelParams, adam, path) -> None:
    """Serialize model (and optionally Adam) state atomically to ``path``."""
    entries = {}
    for name, t in params.params.items():
        entries[f"param:{name}"] = t.data
    for layer, stats in params.stats.items():
        entries[f"stat:{layer}.mean"] = stats.mean
        entries[f"stat:{layer}.var"] = stats.var
    if adam is not None:
        entries["adam:meta"] = np.array(
            [adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps],
            dtype=np.float32)
        for name in adam.m:
            entries[f"adam:m:{name}"] = adam.m[name]
            entries[f"adam:v:{name}"] = adam.v[name]

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name in sorted(entries):
        blob += _encode_entry(name, entries[name])

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


class _Cursor:
    def __init__(self, buf: bytes, label: str):
        self.buf = buf
        self.off = 0
        self.label = label

    def take(self, n: int) -> bytes:
        end = self.off + n
        if end > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint {self.label}: wanted {n} bytes at "
                f"offset {self.off}, file has {len(self.buf)}")
        out = self.buf[self.off:end]
        self.off = end
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse_entries(raw: bytes, label: str) -> dict:
    cur = _Cursor(raw, label)
    if cur.take(4) != MAGIC:
        raise CheckpointError(f"{label} is not a checkpoint (bad magic)")
    (version,) = cur.unpack("<I")
    if version != VERSION:
        raise CheckpointError(
            f"{label}: unsupported checkpoint version {version}, expected {VERSION}")
    (count,) = cur.unpack("<I")
    entries = {}
    for _ in range(count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        (rank,) = cur.unpack("<B")
        dims = cur.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = cur.take(4 * n)
        if name in entries:
            raise CheckpointError(f"{label}: duplicate tensor {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if cur.off != len(raw):
        raise CheckpointError(
            f"{label}: {len(raw) - cur.off} trailing bytes after last tensor")
    return entries


def load_checkpoint(path):
    """Read a checkpoint; returns ``(ModelParams, AdamState or None)``.

    The whole file is validated before any state is built, so a corrupt
    file can never yield partially loaded parameters.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    entries = _parse_entries(raw, str(path))

    expected = _expected_shapes()
    for name, shape in expected.items():
        if name not in entries:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if entries[name].shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {entries[name].shape}, "
                f"expected {shape}")

    param_names = [n[len("param:"):] for n in expected if n.startswith("param:")]
    adam_names = (["adam:meta"]
                  + [f"adam:m:{n}" for n in param_names]
                  + [f"adam:v:{n}" for n in param_names])
    has_adam = "adam:meta" in entries
    allowed = set(expected) | (set(adam_names) if has_adam else set())
    for name in entries:
        if name not in allowed:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
    if has_adam:
        for name in adam_names:
            if name not in entries:
                raise CheckpointError(f"{path}: incomplete adam block, missing {name!r}")
        if entries["adam:meta"].shape != (5,):
            raise CheckpointError(f"{path}: adam:meta must hold 5 values")

    params = {}
    stats = {}
    for layer, cin, cout, k, has_bn in _CONV_PLAN:
        for suffix in ("w", "b") + (("gamma", "beta") if has_bn else ()):
            pname = f"{layer}.{suffix}"
            params[pname] = Tensor(entries[f"param:{pname}"],
                                   requires_grad=True, name=pname)
        if has_bn:
            st = BatchNormStats.create(cout)
            st.mean = entries[f"stat:{layer}.mean"]
            st.var = entries[f"stat:{layer}.var"]
            stats[layer] = st
    mp = ModelParams(params=params, stats=stats)

    adam = None
    if has_adam:
        meta = entries["adam:meta"]
        adam = AdamState(lr=float(meta[1]), beta1=float(meta[2]),
                         beta2=float(meta[3]), eps=float(meta[4]),
                         step=int(round(float(meta[0]))))
        for pname in param_names:
            adam.m[pname] = entries[f"adam:m:{pname}"]
            adam.v[pname] = entries[f"adam:v:{pname}"]
    return mp, adam

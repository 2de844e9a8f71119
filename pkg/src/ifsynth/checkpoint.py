"""IFSCKPT1 checkpoints: a flat list of named float32 arrays.

Layout (little-endian): magic ``IFSCKPT1``, u32 entry count, then per entry
u32 name length, UTF-8 name, u32 rank, rank x u32 extents, float32 payload.
Adam state is stored under ``<param>.adam_m``, ``<param>.adam_v`` and the
scalar ``<param>.step``; configuration scalars live under ``meta.*``, integers
as a sign followed by base-2^16 digits so that they survive float32 exactly.
"""

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"IFSCKPT1"


def encode(entries):
    """``entries``: ordered mapping name -> array-like."""
    out = [MAGIC, struct.pack("<I", len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value, dtype="<f4", order="C")  # keeps 0-d scalars at rank 0
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode(buf, path="<bytes>"):
    mv = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(mv):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = mv[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise FormatError(f"{path}: bad magic / unsupported checkpoint version")
    (count,) = struct.unpack("<I", take(4, "count"))
    entries = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"entry {i} name length"))
        try:
            name = bytes(take(nlen, f"entry {i} name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: entry {i} name is not UTF-8") from exc
        (rank,) = struct.unpack("<I", take(4, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n, f"{name} data"), dtype="<f4").reshape(shape)
        if name in entries:
            raise FormatError(f"{path}: duplicate entry {name}")
        entries[name] = data.astype(np.float32)
    if pos != len(mv):
        raise FormatError(f"{path}: {len(mv) - pos} trailing bytes")
    return entries


def save(path, entries):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(encode(entries))
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as f:
        return decode(f.read(), os.fspath(path))


def param_entries(params, with_optimizer=True):
    out = {}
    for p in params:
        out[p.name] = p.data
        if with_optimizer:
            out[p.name + ".adam_m"] = p.adam_m
            out[p.name + ".adam_v"] = p.adam_v
            out[p.name + ".step"] = np.float32(p.step_count)
    return out


def restore_params(params, entries, path="<checkpoint>"):
    for p in params:
        if p.name not in entries:
            raise FormatError(f"{path}: missing parameter {p.name}")
        val = entries[p.name]
        if val.shape != p.shape:
            raise FormatError(f"{path}: {p.name} has shape {val.shape}, model expects {p.shape}")
        p.data = val.astype(p.dtype).copy()
        if p.name + ".adam_m" in entries:
            p.adam_m = entries[p.name + ".adam_m"].astype(p.dtype).copy()
            p.adam_v = entries[p.name + ".adam_v"].astype(p.dtype).copy()
            p.step_count = int(entries[p.name + ".step"].reshape(-1)[0])
        p.grad = None


def _int_limbs(v):
    """Sign plus base-2^16 digits, all exactly representable in float32."""
    mag = abs(int(v))
    digits = []
    while True:
        digits.append(mag & 0xFFFF)
        mag >>= 16
        if not mag:
            break
    return np.array([1.0 if v < 0 else 0.0] + digits, dtype=np.float32)


def meta_entries(meta):
    """Integers (and bools) are stored as exact limb vectors, reals as float32 scalars."""
    out = {}
    for k, v in meta.items():
        if isinstance(v, (bool, np.bool_, int, np.integer)):
            out[f"meta.{k}"] = _int_limbs(v)
        else:
            out[f"meta.{k}"] = np.float32(v)
    return out


def read_meta(entries):
    meta = {}
    for k, v in entries.items():
        if not k.startswith("meta."):
            continue
        if v.ndim == 1:
            mag = sum(int(d) << (16 * i) for i, d in enumerate(v[1:]))
            meta[k[5:]] = -mag if v[0] else mag
        else:
            meta[k[5:]] = float(v)
    return meta

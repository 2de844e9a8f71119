"""Binary clip containers (.rvid, .cvid) and PPM frame dumps.

.rvid  ``RVID0001`` + u32le T, C, H, W + T*C*H*W bytes (frame, channel, row major)
.cvid  ``CVID0001`` + u32le T, C, H, W, block_size, search_range + i-frame bytes,
       then per P-frame (H/bs)*(W/bs) int8 (dy, dx) pairs and C*H*W int16le residuals
"""

import os
import struct

import numpy as np

from .codec import CompressedClip, MotionField, RawClip
from .errors import FormatError

RVID_MAGIC = b"RVID0001"
CVID_MAGIC = b"CVID0001"


def _atomic_write(path, payload):
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf, path):
        self.buf = memoryview(buf)
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated payload while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.path}: {len(self.buf) - self.pos} trailing bytes")


def _header(r, magic, names):
    got = bytes(r.take(len(magic), "magic"))
    if got != magic:
        raise FormatError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    vals = {n: r.u32(n) for n in names}
    if vals["T"] < 2:
        raise FormatError(f"{r.path}: field T={vals['T']} but clips need T >= 2")
    for n in ("C", "H", "W"):
        if vals[n] == 0:
            raise FormatError(f"{r.path}: field {n} is zero")
    return vals


# -- .rvid -------------------------------------------------------------------


def encode_rvid(clip):
    px = clip.pixels if isinstance(clip, RawClip) else RawClip(clip).pixels
    t, c, h, w = px.shape
    return RVID_MAGIC + struct.pack("<4I", t, c, h, w) + np.ascontiguousarray(px).tobytes()


def write_rvid(path, clip):
    _atomic_write(path, encode_rvid(clip))


def decode_rvid(buf, path="<bytes>"):
    r = _Reader(buf, path)
    v = _header(r, RVID_MAGIC, ("T", "C", "H", "W"))
    n = v["T"] * v["C"] * v["H"] * v["W"]
    px = np.frombuffer(r.take(n, "pixels"), dtype=np.uint8).reshape(v["T"], v["C"], v["H"], v["W"])
    r.finish()
    return RawClip(px.copy())


def read_rvid(path):
    with open(path, "rb") as f:
        return decode_rvid(f.read(), os.fspath(path))


# -- .cvid -------------------------------------------------------------------


def encode_cvid(comp):
    c, h, w = comp.i_frame.shape
    bs = comp.block_size
    if not 0 <= comp.search_range <= 127:
        raise FormatError(f"search_range {comp.search_range} does not fit int8 motion vectors")
    out = [CVID_MAGIC, struct.pack("<6I", comp.T, c, h, w, bs, comp.search_range),
           np.ascontiguousarray(comp.i_frame, dtype=np.uint8).tobytes()]
    for motion, residual in comp.p_frames:
        out.append(motion.grid.astype(np.int8).tobytes())
        out.append(np.ascontiguousarray(residual).astype("<i2").tobytes())
    return b"".join(out)


def write_cvid(path, comp):
    _atomic_write(path, encode_cvid(comp))


def decode_cvid(buf, path="<bytes>"):
    r = _Reader(buf, path)
    v = _header(r, CVID_MAGIC, ("T", "C", "H", "W", "block_size", "search_range"))
    c, h, w, bs = v["C"], v["H"], v["W"], v["block_size"]
    if bs == 0 or h % bs or w % bs:
        raise FormatError(f"{path}: field block_size={bs} does not tile {h}x{w}")
    i_frame = np.frombuffer(r.take(c * h * w, "i_frame"), dtype=np.uint8).reshape(c, h, w).copy()
    nb = (h // bs) * (w // bs)
    p_frames = []
    for t in range(2, v["T"] + 1):
        grid = np.frombuffer(r.take(2 * nb, f"motion[{t}]"), dtype=np.int8)
        grid = grid.reshape(h // bs, w // bs, 2).astype(np.int64)
        if np.abs(grid).max(initial=0) > v["search_range"]:
            raise FormatError(f"{path}: motion[{t}] exceeds search_range {v['search_range']}")
        res = np.frombuffer(r.take(2 * c * h * w, f"residual[{t}]"), dtype="<i2")
        res = res.reshape(c, h, w).astype(np.int16)
        p_frames.append((MotionField(bs, grid), res))
    r.finish()
    return CompressedClip(i_frame, p_frames, bs, v["search_range"])


def read_cvid(path):
    with open(path, "rb") as f:
        return decode_cvid(f.read(), os.fspath(path))


# -- PPM ---------------------------------------------------------------------


def to_uint8(frame):
    """``[-1, 1]`` reals to bytes: round((v + 1) * 127.5), clamped."""
    return np.clip(np.rint((np.asarray(frame, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def write_ppm(path, frame):
    """Write a ``(C, H, W)`` frame in [-1, 1] (or uint8) as binary P6.

    One channel is replicated to grey; more than three channels is an error.
    """
    frame = np.asarray(frame)
    px = frame if frame.dtype == np.uint8 else to_uint8(frame)
    if px.ndim == 2:
        px = px[None]
    if px.shape[0] == 1:
        px = np.repeat(px, 3, axis=0)
    if px.shape[0] != 3:
        raise FormatError(f"PPM needs 1 or 3 channels, got {px.shape[0]}")
    _, h, w = px.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + np.ascontiguousarray(px.transpose(1, 2, 0)).tobytes())


def read_ppm(path):
    """Return a ``(3, H, W)`` uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    body = parts[3]
    if len(body) != 3 * w * h:
        raise FormatError(f"{path}: expected {3 * w * h} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1).copy()

"""Minimal block-matching codec: x_t = warp(x_1, m_t) + r_t, exactly.

Motion is always estimated against the key frame x_1. A displacement
``(dy, dx)`` means a target block at ``(y, x)`` copies the reference block at
``(y + dy, x + dx)``; out-of-frame source pixels are clamped to the border.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, ValidationError

DEFAULT_BLOCK = 8
DEFAULT_SEARCH = 4


@dataclass
class RawClip:
    pixels: np.ndarray  # (T, C, H, W) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 4:
            raise DimensionError(f"clip must be T x C x H x W, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValidationError(f"clip pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.shape[0] < 2:
            raise ValidationError(f"clip needs T >= 2 frames, got {self.pixels.shape[0]}")

    @property
    def T(self):
        return self.pixels.shape[0]

    @property
    def shape(self):
        return self.pixels.shape

    def __len__(self):
        return self.T

    def __getitem__(self, t):
        return self.pixels[t]


@dataclass
class MotionField:
    block_size: int
    grid: np.ndarray  # (H/bs, W/bs, 2) int, (dy, dx)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int64)

    @classmethod
    def zeros(cls, h, w, block_size):
        return cls(block_size, np.zeros((h // block_size, w // block_size, 2), np.int64))

    def __eq__(self, other):
        return (isinstance(other, MotionField) and self.block_size == other.block_size
                and np.array_equal(self.grid, other.grid))


@dataclass
class CompressedClip:
    i_frame: np.ndarray  # (C, H, W) uint8
    p_frames: list = field(default_factory=list)  # [(MotionField, int16 residual (C, H, W))]
    block_size: int = DEFAULT_BLOCK
    search_range: int = DEFAULT_SEARCH

    @property
    def T(self):
        return len(self.p_frames) + 1

    @property
    def motions(self):
        return [m for m, _ in self.p_frames]

    @property
    def residuals(self):
        return [r for _, r in self.p_frames]


def _check_tiling(shape, block_size):
    _, h, w = shape
    if block_size < 1 or block_size > h or block_size > w:
        raise DimensionError(f"block size {block_size} does not fit a {h}x{w} frame")
    if h % block_size or w % block_size:
        raise DimensionError(f"frame {h}x{w} is not a multiple of block size {block_size}")


def estimate_motion(reference, target, block_size=DEFAULT_BLOCK, search_range=DEFAULT_SEARCH):
    """Full-search SAD block matching of ``target`` against ``reference``.

    Ties go to the smaller |dy|+|dx|, then to the earlier displacement in
    row-major (dy, dx) order.
    """
    reference = np.asarray(reference)
    target = np.asarray(target)
    if reference.shape != target.shape or reference.ndim != 3:
        raise DimensionError(f"frame shapes differ: {reference.shape} vs {target.shape}")
    _check_tiling(reference.shape, block_size)
    if search_range < 0:
        raise ValidationError("search_range must be >= 0")
    grid = kernels.block_search(reference, target, block_size, search_range)
    return MotionField(block_size, grid)


def warp(reference, motion):
    reference = np.asarray(reference)
    _, h, w = reference.shape
    bs = motion.block_size
    if motion.grid.shape[:2] != (h // bs, w // bs) or h % bs or w % bs:
        raise DimensionError(f"motion grid {motion.grid.shape[:2]} does not tile a {h}x{w} frame")
    return kernels.warp_blocks(reference, motion.grid, bs)


def compress_clip(clip, block_size=DEFAULT_BLOCK, search_range=DEFAULT_SEARCH):
    if not isinstance(clip, RawClip):
        clip = RawClip(clip)
    x1 = clip.pixels[0]
    _check_tiling(x1.shape, block_size)
    p_frames = []
    for t in range(1, clip.T):
        motion = estimate_motion(x1, clip.pixels[t], block_size, search_range)
        pred = warp(x1, motion)
        residual = clip.pixels[t].astype(np.int16) - pred.astype(np.int16)
        p_frames.append((motion, residual))
    return CompressedClip(x1.copy(), p_frames, block_size, search_range)


def reconstruct_clip(compressed):
    frames = [compressed.i_frame]
    for motion, residual in compressed.p_frames:
        pred = warp(compressed.i_frame, motion).astype(np.int16)
        frames.append(np.clip(pred + residual, 0, 255).astype(np.uint8))
    return RawClip(np.stack(frames))


def motion_to_dense(motion, normalizer):
    """Block-constant ``(2, H, W)`` map of ``(dy, dx) / normalizer``."""
    if normalizer <= 0:
        raise ValidationError("normalizer must be positive")
    bs = motion.block_size
    g = motion.grid.astype(np.float32) / np.float32(normalizer)
    dense = np.repeat(np.repeat(g, bs, axis=0), bs, axis=1)
    return np.ascontiguousarray(dense.transpose(2, 0, 1))


def dense_to_motion(dense, block_size, normalizer):
    """Inverse of :func:`motion_to_dense`: block average, rescale, round."""
    _, h, w = dense.shape
    avg = dense.reshape(2, h // block_size, block_size, w // block_size, block_size).mean(axis=(2, 4))
    grid = np.rint(avg * normalizer).astype(np.int64).transpose(1, 2, 0)
    return MotionField(block_size, grid)

"""Procedural moving-shapes clips labelled by motion direction.

Shape placement, size, colour and texture are drawn independently of the
label and placed with a margin covering the largest displacement, so the
first frame alone says nothing about the class.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .codec import RawClip
from .errors import ConfigError, LoadError, ValidationError
from .formats import read_rvid, write_rvid

MANIFEST_NAME = "manifest.txt"
BACKGROUND_LEVEL = 128
BACKGROUND_NOISE = 12

# (dy, dx) unit steps for the first four classes: right, left, up, down
_BASE_DIRECTIONS = ((0.0, 1.0), (0.0, -1.0), (-1.0, 0.0), (1.0, 0.0))


@dataclass
class GeneratorConfig:
    num_clips: int = 1000
    K: int = 4
    T: int = 6
    H: int = 32
    W: int = 32
    shapes_per_clip: int = 2
    speed_range: tuple = (0.4, 0.8)
    seed: int = 0
    val_fraction: float = 0.2
    block_size: int = 8
    min_size: int = 6
    max_size: int = 12

    def validate(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if self.H % self.block_size or self.W % self.block_size:
            raise ConfigError(f"H, W must be multiples of block size {self.block_size}")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad speed_range {self.speed_range}")
        if not 1 <= self.min_size <= self.max_size:
            raise ConfigError("need 1 <= min_size <= max_size")
        margin = self.margin
        if self.max_size + 2 * margin > min(self.H, self.W):
            raise ConfigError(
                f"shapes up to {self.max_size}px moving up to {margin}px do not fit a {self.H}x{self.W} frame")
        if self.num_clips < 1:
            raise ConfigError("num_clips must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        return self

    @property
    def margin(self):
        return int(math.ceil(self.speed_range[1] * (self.T - 1)))


def direction(label, K):
    if K <= 4:
        return _BASE_DIRECTIONS[label]
    ang = 2.0 * math.pi * label / K
    return (-math.sin(ang), math.cos(ang))


def flip_label(label, K):
    """Label of the mirrored clip: left and right swap, other classes map by reflection."""
    if K <= 4:
        return {0: 1, 1: 0}.get(label, label)
    return (K // 2 - label) % K


def _background(rng, cfg):
    """Mid-grey with low-amplitude noise texture.

    A per-clip colour offset would be invisible to instance-normalised
    generators, so the clip's mean colour is carried by the shapes instead.
    """
    noise = rng.integers(-BACKGROUND_NOISE, BACKGROUND_NOISE + 1, size=(3, cfg.H, cfg.W))
    return (BACKGROUND_LEVEL + noise).astype(np.int16)


def _shape_sprite(rng, cfg):
    """A textured rectangle or disc: returns (colour patch (3,h,w), mask (h,w))."""
    h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    if rng.random() < 0.5:
        w = h
        yy, xx = np.mgrid[0:h, 0:w]
        r = (h - 1) / 2.0
        mask = (yy - r) ** 2 + (xx - r) ** 2 <= (r + 0.25) ** 2
    else:
        mask = np.ones((h, w), bool)
    color = rng.integers(0, 256, size=3)
    texture = rng.integers(-30, 31, size=(3, h, w))
    patch = np.clip(color[:, None, None] + texture, 0, 255).astype(np.int16)
    return patch, mask


def render_clip(cfg, label, rng):
    """Draw one clip. Returns ``(pixels uint8 (T,3,H,W), masks bool (T,H,W), centers (T,S,2))``."""
    bg = _background(rng, cfg)
    margin = cfg.margin
    uy, ux = direction(label, cfg.K)
    sprites = []
    for _ in range(cfg.shapes_per_clip):
        patch, mask = _shape_sprite(rng, cfg)
        h, w = mask.shape
        y0 = int(rng.integers(margin, cfg.H - h - margin + 1))
        x0 = int(rng.integers(margin, cfg.W - w - margin + 1))
        speed = float(rng.uniform(*cfg.speed_range))
        sprites.append((patch, mask, y0, x0, speed))

    frames = np.empty((cfg.T, 3, cfg.H, cfg.W), np.uint8)
    masks = np.zeros((cfg.T, cfg.H, cfg.W), bool)
    centers = np.zeros((cfg.T, len(sprites), 2))
    for t in range(cfg.T):
        img = bg.copy()
        for s, (patch, mask, y0, x0, speed) in enumerate(sprites):
            h, w = mask.shape
            y = y0 + int(round(uy * speed * t))
            x = x0 + int(round(ux * speed * t))
            region = img[:, y:y + h, x:x + w]
            region[:, mask] = patch[:, mask]
            masks[t, y:y + h, x:x + w] |= mask
            centers[t, s] = (y + (h - 1) / 2.0, x + (w - 1) / 2.0)
        frames[t] = img.astype(np.uint8)
    return frames, masks, centers


def clip_rng(seed, index):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, index])


def clip_labels(cfg):
    """Balanced labels (``i % K``) shuffled with the seed; split by position."""
    labels = np.arange(cfg.num_clips) % cfg.K
    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, 2**32 - 1])
    order = rng.permutation(cfg.num_clips)
    labels = labels[order]
    n_val = int(round(cfg.num_clips * cfg.val_fraction))
    n_train = cfg.num_clips - n_val
    splits = ["train"] * n_train + ["val"] * n_val
    return labels, splits


# --------------------------------------------------------------------------
# manifest


@dataclass
class ClipRecord:
    clip_path: str
    label: int
    split: str


class Manifest:
    """Ordered clip records; paths are stored relative to ``root``."""

    def __init__(self, records, root=".", num_classes=None):
        self.records = list(records)
        self.root = os.fspath(root)
        self.num_classes = num_classes or (max((r.label for r in self.records), default=0) + 1)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def path(self, record):
        return os.path.join(self.root, record.clip_path)

    def split(self, name):
        return Manifest([r for r in self.records if r.split == name], self.root, self.num_classes)

    def subset(self, n):
        return Manifest(self.records[:n], self.root, self.num_classes)

    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    def load(self, record):
        try:
            return read_rvid(self.path(record))
        except OSError as exc:
            raise LoadError(f"cannot read clip {self.path(record)}: {exc}") from exc


def write_manifest(path, records):
    lines = [f"{r.clip_path}\t{r.label}\t{r.split}\n" for r in records]
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)
    os.replace(tmp, path)


def load_manifest(path, num_classes=None):
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise LoadError(f"cannot read manifest {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
        rel, label, split = parts
        try:
            label = int(label)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: label {label!r} is not an integer") from exc
        if split not in ("train", "val"):
            raise ValidationError(f"{path}:{lineno}: split must be train or val, got {split!r}")
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ValidationError(f"{path}:{lineno}: label {label} out of range")
        records.append(ClipRecord(rel, label, split))
    return Manifest(records, os.path.dirname(path), num_classes)


# --------------------------------------------------------------------------
# generation and iteration


def generate_moving_shapes(cfg, out_dir):
    """Write ``clips/clip_XXXXX.rvid`` and ``manifest.txt`` under ``out_dir``."""
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "clips"), exist_ok=True)
    labels, splits = clip_labels(cfg)
    records = []
    for i in range(cfg.num_clips):
        frames, _, _ = render_clip(cfg, int(labels[i]), clip_rng(cfg.seed, i))
        rel = f"clips/clip_{i:05d}.rvid"
        write_rvid(os.path.join(out_dir, rel), RawClip(frames))
        records.append(ClipRecord(rel, int(labels[i]), splits[i]))
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), records)
    return Manifest(records, out_dir, cfg.K)


def epoch_order(n, shuffle_seed, epoch=0):
    return np.random.default_rng([int(shuffle_seed) & 0xFFFFFFFFFFFFFFFF, epoch]).permutation(n)


def iterate_batches(manifest, batch_size, shuffle_seed, epoch=0, shuffle=True):
    """Yield ``(clips uint8 (N,T,C,H,W), labels)``; the last batch may be short."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    n = len(manifest)
    order = epoch_order(n, shuffle_seed, epoch) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        recs = [manifest.records[i] for i in idx]
        clips = np.stack([manifest.load(r).pixels for r in recs])
        yield clips, np.array([r.label for r in recs], dtype=np.int64)


def flip_horizontal(clip, apply=True):
    if not apply:
        return clip
    px = clip.pixels if isinstance(clip, RawClip) else np.asarray(clip)
    flipped = np.ascontiguousarray(px[..., ::-1])
    return RawClip(flipped) if isinstance(clip, RawClip) else flipped


def normalize_clip(clip):
    px = clip.pixels if isinstance(clip, RawClip) else np.asarray(clip)
    return px.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(x):
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)

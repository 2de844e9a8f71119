"""Frame sources for downstream recognition and the top-1 evaluation protocol."""

import os
from dataclasses import dataclass

import numpy as np

from .codec import RawClip, compress_clip
from .dataset import normalize_clip
from .errors import ConfigError, ContractError, ValidationError
from .models import assemble_input
from .ops import softmax_np
from .tensor import Tensor, no_grad

SOURCES = ("ifs", "ifs_mot", "i_frame", "ave")


@dataclass
class SyntheticFrame:
    data: np.ndarray  # (C, H, W) in [-1, 1]
    source: str
    offset: int = 0
    checkpoint: str = ""


def baseline_ave_frame(clip):
    """Pixel-wise mean of the normalised frames of a clip."""
    return normalize_clip(clip).mean(axis=0)


def _pixels(clip):
    return clip.pixels if isinstance(clip, RawClip) else np.asarray(clip)


class FrameSource:
    """Turns a T-frame window into one still frame.

    ``ifs`` / ``ifs_mot`` run a trained generator; ``i_frame`` returns the
    decoded key frame and ``ave`` the mean frame.
    """

    def __init__(self, kind, T, generator=None, block_size=8, search_range=4, input_mode="compressed",
                 checkpoint="", batch_size=32):
        if kind not in SOURCES:
            raise ConfigError(f"unknown frame source {kind!r}; choose from {SOURCES}")
        if kind in ("ifs", "ifs_mot") and generator is None:
            raise ConfigError(f"frame source {kind} needs an IFS checkpoint")
        self.kind = kind
        self.T = int(T)
        self.generator = generator
        self.block_size = block_size
        self.search_range = search_range
        self.input_mode = input_mode
        self.checkpoint = checkpoint
        self.batch_size = batch_size

    @classmethod
    def create(cls, kind, ifs_checkpoint=None, cfg=None):
        if kind in ("ifs", "ifs_mot"):
            if not ifs_checkpoint:
                raise ConfigError(f"frame source {kind} needs an IFS checkpoint")
            from .trainer import load_ifs
            from .models import INPUT_MODES

            nets, meta = load_ifs(ifs_checkpoint)
            return cls(kind, int(meta["T"]), nets.F, int(meta["block_size"]), int(meta["search_range"]),
                       INPUT_MODES[int(meta["input_mode"])], os.fspath(ifs_checkpoint))
        T = cfg.T if cfg is not None else 6
        return cls(kind, T)

    def _inputs(self, windows):
        return np.stack([assemble_input(compress_clip(w, self.block_size, self.search_range), self.input_mode)
                         for w in windows])

    def frames(self, windows):
        """``windows``: sequence of ``(T, C, H, W)`` uint8 clips. Returns ``(N, C, H, W)`` float32."""
        windows = [_pixels(w) for w in windows]
        for w in windows:
            if w.shape[0] != self.T:
                raise ContractError(f"window has {w.shape[0]} frames, source expects {self.T}")
        if self.kind == "i_frame":
            return np.stack([normalize_clip(w[0]) for w in windows])
        if self.kind == "ave":
            return np.stack([baseline_ave_frame(w) for w in windows])
        out = []
        with no_grad():
            for s in range(0, len(windows), self.batch_size):
                out.append(self.generator(Tensor(self._inputs(windows[s:s + self.batch_size]))).data)
        return np.concatenate(out, axis=0)


def synthesize_frame(source, window, offset=0):
    data = source.frames([window])[0]
    return SyntheticFrame(data, source.kind, offset, source.checkpoint)


def window_offsets(length, window, k=None):
    """Start frames of ``k`` non-overlapping windows spread evenly over the video.

    ``k=None`` (or ``k`` at least the number of slots) returns every slot.
    """
    slots = length // window
    if slots < 1:
        raise ContractError(f"video of {length} frames is shorter than the window of {window}")
    if k is not None and k < 1:
        raise ValidationError("samples per video must be >= 1")
    if k is None or k >= slots:
        idx = np.arange(slots)
    else:
        idx = np.unique(np.rint(np.linspace(0, slots - 1, k)).astype(int))
    return [int(i) * window for i in idx]


def synthesize_clip_summary(source, video):
    """One frame per non-overlapping window, ``floor(len / T)`` in total."""
    px = _pixels(video)
    offsets = window_offsets(px.shape[0], source.T)
    frames = source.frames([px[o:o + source.T] for o in offsets])
    return [SyntheticFrame(f, source.kind, o, source.checkpoint) for f, o in zip(frames, offsets)]


def predict_video(classifier, source, video, samples_per_video=1):
    """Average the softmax over sampled windows; ties go to the lowest class index."""
    px = _pixels(video)
    offsets = window_offsets(px.shape[0], source.T, samples_per_video)
    frames = source.frames([px[o:o + source.T] for o in offsets])
    with no_grad():
        probs = softmax_np(classifier(Tensor(frames)).data.astype(np.float64))
    return int(np.argmax(probs.mean(axis=0))), len(offsets)


def evaluate_top1(classifier, manifest, source, samples_per_video=1, split="val", report_path=None):
    """Video-level top-1 accuracy on ``split``; optionally writes a small report."""
    records = manifest.split(split) if split else manifest
    if not len(records):
        raise ContractError(f"evaluation split {split!r} is empty")
    correct = 0
    for rec in records:
        pred, _ = predict_video(classifier, source, records.load(rec), samples_per_video)
        correct += int(pred == rec.label)
    top1 = correct / len(records)
    if report_path:
        with open(report_path, "w") as f:
            f.write(f"top1={top1!r}\nvideos={len(records)}\nsamples_per_video={samples_per_video}\n")
    return top1

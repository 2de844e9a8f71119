"""Task losses, regularisers and their unweighted sum."""

from dataclasses import dataclass, field, fields

import numpy as np

from . import ops
from .errors import DimensionError, DivergenceError
from .nn import frozen
from .tensor import Tensor

TASKS = ("app", "cat", "mot")
REGULARIZERS = ("adv", "color")
CSV_COLUMNS = ("step", "lr", "l_app", "l_cat", "l_mot", "r_adv_d", "r_adv_g", "r_color", "total")

# the seven task combinations of the ablation table
TASK_COMBINATIONS = (
    ("app",), ("cat",), ("mot",),
    ("app", "cat"), ("app", "mot"), ("cat", "mot"),
    ("app", "cat", "mot"),
)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def appearance_loss(x1, recovered):
    """Mean squared error over every element, batch included."""
    _same_shape(x1, recovered, "appearance_loss")
    return ops.square(ops.sub(x1, recovered)).mean()


def categorization_loss(logits, labels):
    return ops.cross_entropy(logits, labels)


def motion_loss_weights(T, C, H, W, batch, dtype=np.float32):
    """Per-channel weights turning a weighted sum of squared errors into
    ``1/(T-1) * sum_t [MSE(m_t) + MSE(r_t)]``."""
    per_t = []
    for _ in range(T - 1):
        per_t += [1.0 / (2 * H * W * batch)] * 2 + [1.0 / (C * H * W * batch)] * C
    return (np.asarray(per_t, dtype=dtype) / (T - 1)).reshape(1, -1, 1, 1)


def motion_loss(predicted, target, T, C=3):
    _same_shape(predicted, target, "motion_loss")
    n, ch, h, w = predicted.shape
    if ch != (T - 1) * (2 + C):
        raise DimensionError(f"motion_loss: {ch} channels, expected (T-1)(2+C) = {(T - 1) * (2 + C)}")
    weights = motion_loss_weights(T, C, h, w, n, predicted.dtype)
    return ops.mul(ops.square(ops.sub(predicted, target)), weights).sum()


def discriminator_loss(D, x1, x_hat, swap_labels=False):
    """Discriminator side of the least-squares GAN; ``x_hat`` is detached.

    Default targets: real -> 0, fake -> 1. ``swap_labels`` gives the usual
    real -> 1, fake -> 0 convention.
    """
    real = D(x1)
    fake = D(ops.detach(x_hat))
    if swap_labels:
        return ops.square(ops.sub(1.0, real)).mean() + ops.square(fake).mean()
    return ops.square(real).mean() + ops.square(ops.sub(1.0, fake)).mean()


def generator_adversarial_loss(D, x_hat, swap_labels=False):
    """Generator side; the discriminator is frozen so only ``x_hat``'s graph gets gradients."""
    with frozen(D):
        fake = D(x_hat)
    if swap_labels:
        return ops.square(ops.sub(1.0, fake)).mean()
    return ops.square(fake).mean()


def adversarial_losses(D, x1, x_hat, swap_labels=False):
    """``(r_adv_d, r_adv_g)``."""
    return (discriminator_loss(D, x1, x_hat, swap_labels),
            generator_adversarial_loss(D, x_hat, swap_labels))


def color_consistency_loss(clip, x_hat):
    """``1/T sum_t ||Ave(x_t) - Ave(x_hat)||^2``, distance meaned over channels and batch.

    ``clip`` is ``(N, T, C, H, W)``; ``x_hat`` is ``(N, C, H, W)``.
    """
    clip = clip if isinstance(clip, Tensor) else Tensor(np.asarray(clip, dtype=x_hat.dtype))
    n, t, c, h, w = clip.shape
    if x_hat.shape != (n, c, h, w):
        raise DimensionError(f"color_consistency_loss: clip {clip.shape} vs frame {x_hat.shape}")
    ave_clip = ops.reduce_mean_spatial(clip.reshape(n * t, c, h, w)).reshape(n, t, c)
    ave_hat = ops.reduce_mean_spatial(x_hat).reshape(n, 1, c)
    return ops.square(ops.sub(ave_clip, ave_hat)).mean()


@dataclass
class LossReport:
    l_app: float = 0.0
    l_cat: float = 0.0
    l_mot: float = 0.0
    r_adv_d: float = 0.0
    r_adv_g: float = 0.0
    r_color: float = 0.0
    total: float = 0.0
    enabled: frozenset = field(default_factory=frozenset)

    TERM_FLAGS = {"l_app": "app", "l_cat": "cat", "l_mot": "mot",
                  "r_adv_g": "adv", "r_adv_d": "adv", "r_color": "color"}

    def terms(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "enabled"}

    def check_finite(self):
        for name, val in self.terms().items():
            if not np.isfinite(val):
                raise DivergenceError(f"loss term {name} diverged ({val})")

    def csv_row(self, step, lr):
        vals = [getattr(self, c) for c in CSV_COLUMNS[2:]]
        return ",".join([str(step), repr(float(lr))] + [repr(float(v)) for v in vals])


def total_loss(parts, enabled):
    """Unweighted sum of the enabled parts.

    ``parts`` maps ``l_app, l_cat, l_mot, r_adv_g, r_color`` to tensors or
    floats; ``enabled`` is a collection of flags from TASKS + REGULARIZERS.
    """
    keys = [("l_app", "app"), ("l_cat", "cat"), ("l_mot", "mot"), ("r_adv_g", "adv"), ("r_color", "color")]
    total = None
    for key, flag in keys:
        if flag in enabled and key in parts and parts[key] is not None:
            total = parts[key] if total is None else total + parts[key]
    return 0.0 if total is None else total


def color_gap(clips, frames):
    """Mean over clips and channels of ``|Ave(x_hat) - Ave(clip)|`` (numpy, no graph).

    ``clips`` ``(N, T, C, H, W)`` and ``frames`` ``(N, C, H, W)``, both in [-1, 1].
    """
    clips = np.asarray(clips, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    if clips.shape[:1] + clips.shape[2:] != frames.shape:
        raise DimensionError(f"color_gap: clips {clips.shape} vs frames {frames.shape}")
    return float(np.abs(frames.mean(axis=(2, 3)) - clips.mean(axis=(1, 3, 4))).mean())

"""Generator, decoders, classifier and discriminator, plus input assembly."""

from dataclasses import dataclass

import numpy as np

from . import ops
from .codec import motion_to_dense, reconstruct_clip
from .errors import ConfigError, ContractError
from .nn import Conv2d, ConvTranspose2d, InstanceNorm, Linear, Module, assign_names

INPUT_MODES = ("compressed", "raw", "motion_only")
ENCODER_STAGES = 5


@dataclass
class ArchConfig:
    base_width: int = 16
    n_res_blocks: int = 3
    input_channels: int = 28
    output_channels: int = 3
    H: int = 32
    W: int = 32

    def validate(self):
        if self.H % 4 or self.W % 4:
            raise ConfigError(f"spatial extents {self.H}x{self.W} must be divisible by 4")
        if self.n_res_blocks < 1:
            raise ConfigError("n_res_blocks must be >= 1")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")
        return self


REFERENCE_ARCH = ArchConfig(base_width=32, n_res_blocks=9, input_channels=3, output_channels=3, H=224, W=224)


def input_channels(mode, T, C=3):
    if mode in ("compressed", "motion_only"):
        return C + (T - 1) * (2 + C)
    if mode == "raw":
        return T * C
    raise ConfigError(f"unknown input mode {mode!r}")


def motion_channels(T, C=3):
    return (T - 1) * (2 + C)


# --------------------------------------------------------------------------
# building blocks


class ResBlock(Module):
    def __init__(self, rng, ch):
        self.conv1 = Conv2d(rng, ch, ch, 3, 1, 1)
        self.norm1 = InstanceNorm(ch)
        self.conv2 = Conv2d(rng, ch, ch, 3, 1, 1)
        self.norm2 = InstanceNorm(ch)

    def branch(self, x):
        h = ops.relu(self.norm1(self.conv1(x)))
        return self.norm2(self.conv2(h))

    def forward(self, x):
        return self.branch(x) + x


class EncoderDecoder(Module):
    """7x7 stem, two stride-2 downsamplers, residual trunk, two upsamplers, tanh head.

    The stem uses reflection padding; every other convolution zero-pads.
    """

    def __init__(self, rng, cin, cout, base_width=32, n_res_blocks=9):
        w = base_width
        self.conv1 = Conv2d(rng, cin, w, 7, 1, 3, pad_mode="reflect")
        self.norm1 = InstanceNorm(w)
        self.conv2 = Conv2d(rng, w, 2 * w, 4, 2, 1)
        self.norm2 = InstanceNorm(2 * w)
        self.conv3 = Conv2d(rng, 2 * w, 4 * w, 4, 2, 1)
        self.norm3 = InstanceNorm(4 * w)
        self.res = [ResBlock(rng, 4 * w) for _ in range(n_res_blocks)]
        self.up1 = ConvTranspose2d(rng, 4 * w, 2 * w, 4, 2, 1)
        self.norm4 = InstanceNorm(2 * w)
        self.up2 = ConvTranspose2d(rng, 2 * w, w, 4, 2, 1)
        self.norm5 = InstanceNorm(w)
        self.head = Conv2d(rng, w, cout, 7, 1, 3)
        self.in_channels = cin
        self.out_channels = cout

    def features(self, x):
        """Activations right before the output head (``base_width x H x W``)."""
        _, c, h, w = x.shape
        if c != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} input channels, got {c}")
        if h % 4 or w % 4:
            raise ConfigError(f"spatial extents {h}x{w} must be divisible by 4")
        x = ops.relu(self.norm1(self.conv1(x)))
        x = ops.relu(self.norm2(self.conv2(x)))
        x = ops.relu(self.norm3(self.conv3(x)))
        for block in self.res:
            x = block(x)
        x = ops.relu(self.norm4(self.up1(x)))
        return ops.relu(self.norm5(self.up2(x)))

    def forward(self, x):
        return ops.tanh(self.head(self.features(x)))


class Encoder(Module):
    """Five 4x4 stride-2 convolutions with leaky ReLU(0.2).

    Instance norm follows a convolution whenever its output keeps at least two
    spatial positions, except on the first layer when ``norm_first`` is off.
    """

    def __init__(self, rng, cin, base_width, H, W, norm_first=True):
        widths = [base_width * 2 ** i for i in range(ENCODER_STAGES)]
        self.convs = []
        self.norms = []
        h, w, c = H, W, cin
        for i, width in enumerate(widths):
            self.convs.append(Conv2d(rng, c, width, 4, 2, 1))
            h, w = h // 2, w // 2
            use_norm = h * w >= 2 and (i > 0 or norm_first)
            self.norms.append(InstanceNorm(width) if use_norm else None)
            c = width
        self.out_channels = c
        self.H, self.W = H, W

    def forward(self, x):
        _, _, h, w = x.shape
        div = 2 ** ENCODER_STAGES
        if h % div or w % div:
            raise ConfigError(f"encoder input {h}x{w} must be divisible by {div}")
        if (h, w) != (self.H, self.W):
            raise ConfigError(f"encoder built for {self.H}x{self.W}, got {h}x{w}")
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x)
            if norm is not None:
                x = norm(x)
            x = ops.leaky_relu(x, 0.2)
        return x


class Classifier(Module):
    def __init__(self, rng, cin, num_classes, base_width, H, W):
        self.encoder = Encoder(rng, cin, base_width, H, W, norm_first=True)
        self.fc = Linear(rng, self.encoder.out_channels, num_classes)
        self.num_classes = num_classes

    def forward(self, x):
        return self.fc(ops.reduce_mean_spatial(self.encoder(x)))


class Discriminator(Module):
    def __init__(self, rng, cin, base_width, H, W):
        self.encoder = Encoder(rng, cin, base_width, H, W, norm_first=False)
        self.score = Conv2d(rng, self.encoder.out_channels, 1, 1)

    def forward(self, x):
        return self.score(self.encoder(x))


# --------------------------------------------------------------------------
# the five IFS networks


class IFSNetworks:
    """F, F_a^-1, F_m^-1, the task classifier and the discriminator."""

    NAMES = ("F", "Fa", "Fm", "C", "D")

    def __init__(self, arch, T, num_classes, seed=0):
        arch.validate()
        self.arch = arch
        self.T = T
        self.num_classes = num_classes
        c = arch.output_channels
        rng = np.random.default_rng(seed)
        bw, nr = arch.base_width, arch.n_res_blocks
        self.F = EncoderDecoder(rng, arch.input_channels, c, bw, nr)
        self.Fa = EncoderDecoder(rng, c, c, bw, nr)
        self.Fm = EncoderDecoder(rng, c, motion_channels(T, c), bw, nr)
        self.C = Classifier(rng, c, num_classes, bw, arch.H, arch.W)
        self.D = Discriminator(rng, c, bw, arch.H, arch.W)
        for name in self.NAMES:
            assign_names(getattr(self, name), name)

    def networks(self):
        return {name: getattr(self, name) for name in self.NAMES}

    def parameters(self, names=NAMES):
        return [p for n in names for p in getattr(self, n).parameters()]

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]


def build_classifier(arch, num_classes, seed=0, prefix="C"):
    rng = np.random.default_rng(seed)
    net = Classifier(rng, arch.output_channels, num_classes, arch.base_width, arch.H, arch.W)
    assign_names(net, prefix)
    return net


# --------------------------------------------------------------------------
# input assembly


def assemble_input(compressed, mode="compressed"):
    """Channel-stack a compressed clip into the generator input ``(Cin, H, W)``.

    compressed/motion_only: ``[x1; m_2, r_2; ...; m_T, r_T]`` with x1 in
    [-1, 1], motion divided by the search range and residuals by 255.
    motion_only zeroes the x1 channels. raw: the T normalised frames.
    """
    if mode not in INPUT_MODES:
        raise ConfigError(f"unknown input mode {mode!r}")
    if mode == "raw":
        frames = reconstruct_clip(compressed).pixels.astype(np.float32) / 127.5 - 1.0
        t, c, h, w = frames.shape
        return frames.reshape(t * c, h, w)
    x1 = compressed.i_frame.astype(np.float32) / 127.5 - 1.0
    if mode == "motion_only":
        x1 = np.zeros_like(x1)
    return np.concatenate([x1, motion_target(compressed)], axis=0)


def motion_target(compressed):
    """Regression target for the motion decoder: ``[m_2(2), r_2(C), m_3, ...]``."""
    norm = float(max(compressed.search_range, 1))
    parts = []
    for motion, residual in compressed.p_frames:
        parts.append(motion_to_dense(motion, norm))
        parts.append(residual.astype(np.float32) / 255.0)
    return np.concatenate(parts, axis=0).astype(np.float32)


def assemble_batch(compressed_list, mode="compressed"):
    ts = {c.T for c in compressed_list}
    if len(ts) > 1:
        raise ContractError(f"mixed clip lengths in one batch: {sorted(ts)}")
    return np.stack([assemble_input(c, mode) for c in compressed_list])

"""Joint training of the five IFS networks and of downstream frame classifiers."""

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .codec import compress_clip
from .dataset import Manifest, epoch_order, flip_horizontal, flip_label, load_manifest, normalize_clip
from .errors import ConfigError, DivergenceError, FormatError, LoadError
from .losses import (CSV_COLUMNS, REGULARIZERS, TASKS, LossReport, appearance_loss, categorization_loss,
                     color_consistency_loss, discriminator_loss, generator_adversarial_loss, motion_loss,
                     total_loss)
from .models import INPUT_MODES, ArchConfig, IFSNetworks, assemble_input, build_classifier, input_channels, motion_target
from .optim import Adam, cosine_lr
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

FRAME_SOURCES = ("ifs", "ifs_mot", "i_frame", "ave")
KIND_IFS, KIND_CLASSIFIER = 0.0, 1.0


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    base_lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tasks: tuple = ("app", "cat", "mot")
    regs: tuple = ("adv", "color")
    input_mode: str = "compressed"
    base_width: int = 16
    n_res_blocks: int = 3
    seed: int = 0
    T: int = 6
    block_size: int = 8
    search_range: int = 4
    d_every: int = 1
    swap_adv_labels: bool = False
    flip: str = "auto"
    directional: bool = True
    classifier_epochs: int = 20
    classifier_lr: float = 0.001
    max_steps: int = 0

    def validate(self):
        bad = set(self.tasks) - set(TASKS)
        if bad:
            raise ConfigError(f"unknown tasks {sorted(bad)}; choose from {TASKS}")
        bad = set(self.regs) - set(REGULARIZERS)
        if bad:
            raise ConfigError(f"unknown regularizers {sorted(bad)}; choose from {REGULARIZERS}")
        if not self.tasks and not self.regs:
            raise ConfigError("at least one task or regularizer must be enabled")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}")
        if self.flip not in ("auto", "on", "off"):
            raise ConfigError("flip must be auto, on or off")
        for name in ("epochs", "batch_size", "T", "block_size", "d_every", "classifier_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        return self

    @property
    def enabled(self):
        return frozenset(self.tasks) | frozenset(self.regs)

    @property
    def use_flip(self):
        if self.flip == "auto":
            return not self.directional
        return self.flip == "on"

    def arch(self, H, W, channels=3):
        return ArchConfig(self.base_width, self.n_res_blocks, input_channels(self.input_mode, self.T, channels),
                          channels, H, W).validate()


# --------------------------------------------------------------------------
# data preparation


@dataclass
class ClipArrays:
    """Network-ready arrays for a set of clips (row i = clip i)."""

    inputs: np.ndarray  # (N, Cin, H, W)
    x1: np.ndarray  # (N, C, H, W) in [-1, 1]
    clips: np.ndarray  # (N, T, C, H, W) in [-1, 1]
    motion: np.ndarray  # (N, (T-1)(2+C), H, W)
    labels: np.ndarray  # (N,)

    def __len__(self):
        return len(self.labels)

    def take(self, idx):
        return ClipArrays(self.inputs[idx], self.x1[idx], self.clips[idx], self.motion[idx], self.labels[idx])


def prepare_clip(pixels, cfg):
    comp = compress_clip(pixels, cfg.block_size, cfg.search_range)
    return (assemble_input(comp, cfg.input_mode), normalize_clip(pixels), motion_target(comp))


def prepare_arrays(pixel_list, labels, cfg):
    inputs, clips, motion = zip(*(prepare_clip(p, cfg) for p in pixel_list))
    clips = np.stack(clips)
    return ClipArrays(np.stack(inputs), np.ascontiguousarray(clips[:, 0]), clips, np.stack(motion),
                      np.asarray(labels, dtype=np.int64))


def load_pixels(manifest, T):
    out = []
    for rec in manifest:
        px = manifest.load(rec).pixels
        if px.shape[0] < T:
            raise ConfigError(f"{rec.clip_path} has {px.shape[0]} frames, T={T}")
        out.append(px[:T])
    return out


def augment(arrays, pixels, idx, cfg, rng, num_classes):
    """Mirror a random half of the batch, re-encoding the flipped clips."""
    batch = arrays.take(idx)
    if not cfg.use_flip:
        return batch
    flips = rng.random(len(idx)) < 0.5
    for j in np.nonzero(flips)[0]:
        px = flip_horizontal(pixels[idx[j]])
        inp, clip, mot = prepare_clip(px, cfg)
        batch.inputs[j], batch.clips[j], batch.x1[j], batch.motion[j] = inp, clip, clip[0], mot
        if cfg.directional:
            batch.labels[j] = flip_label(int(batch.labels[j]), num_classes)
    return batch


# --------------------------------------------------------------------------
# IFS step


def _term(name, fn):
    try:
        val = fn()
    except DivergenceError:
        raise
    except FloatingPointError as exc:
        raise DivergenceError(f"loss term {name} diverged: {exc}") from exc
    if not np.isfinite(val.data).all():
        raise DivergenceError(f"loss term {name} diverged ({val.item()})")
    return val


def make_optimizers(nets, cfg):
    names = ["F"] + [n for n, t in (("Fa", "app"), ("C", "cat"), ("Fm", "mot")) if t in cfg.tasks]
    opt_g = Adam(nets.parameters(names), cfg.base_lr, cfg.beta1, cfg.beta2, cfg.eps)
    opt_d = Adam(nets.D.parameters(), cfg.base_lr, cfg.beta1, cfg.beta2, cfg.eps)
    return opt_g, opt_d


def compute_parts(nets, batch, x_hat, cfg):
    enabled = cfg.enabled
    c = nets.arch.output_channels
    parts = {}
    if "app" in enabled:
        parts["l_app"] = _term("l_app", lambda: appearance_loss(Tensor(batch.x1), nets.Fa(x_hat)))
    if "cat" in enabled:
        parts["l_cat"] = _term("l_cat", lambda: categorization_loss(nets.C(x_hat), batch.labels))
    if "mot" in enabled:
        parts["l_mot"] = _term("l_mot", lambda: motion_loss(nets.Fm(x_hat), Tensor(batch.motion), cfg.T, c))
    if "adv" in enabled:
        parts["r_adv_g"] = _term("r_adv_g", lambda: generator_adversarial_loss(nets.D, x_hat, cfg.swap_adv_labels))
    if "color" in enabled:
        parts["r_color"] = _term("r_color", lambda: color_consistency_loss(batch.clips, x_hat))
    return parts


def train_ifs_step(batch, nets, opt_g, opt_d, lr, cfg, step=0):
    """One update: discriminator first (on the detached frame), then all
    generator-side networks on the unweighted joint loss."""
    x_hat = _term("F", lambda: nets.F(Tensor(batch.inputs)))
    report = LossReport(enabled=cfg.enabled)
    if "adv" in cfg.enabled:
        nets.D.zero_grad()
        d_loss = _term("r_adv_d", lambda: discriminator_loss(nets.D, Tensor(batch.x1), x_hat, cfg.swap_adv_labels))
        report.r_adv_d = d_loss.item()
        if step % cfg.d_every == 0:
            d_loss.backward()
            opt_d.step(lr)
        nets.D.zero_grad()

    parts = compute_parts(nets, batch, x_hat, cfg)
    total = total_loss(parts, cfg.enabled)
    opt_g.zero_grad()
    total.backward()
    opt_g.step(lr)
    opt_g.zero_grad()

    for key, val in parts.items():
        setattr(report, key, val.item())
    report.total = total.item()
    report.check_finite()
    return report


def evaluate_ifs(nets, arrays, cfg, batch_size=None):
    """Mean loss report over ``arrays`` without updating anything."""
    batch_size = batch_size or cfg.batch_size
    acc = {k: 0.0 for k in LossReport().terms()}
    n = len(arrays)
    with no_grad():
        for s in range(0, n, batch_size):
            batch = arrays.take(np.arange(s, min(n, s + batch_size)))
            w = len(batch) / n
            x_hat = nets.F(Tensor(batch.inputs))
            parts = compute_parts(nets, batch, x_hat, cfg)
            for key, val in parts.items():
                acc[key] += w * val.item()
            acc["total"] += w * float(total_loss({k: v.item() for k, v in parts.items()}, cfg.enabled))
            if "adv" in cfg.enabled:
                acc["r_adv_d"] += w * discriminator_loss(nets.D, Tensor(batch.x1), x_hat,
                                                         cfg.swap_adv_labels).item()
    return LossReport(enabled=cfg.enabled, **acc)


# --------------------------------------------------------------------------
# checkpoints


def ifs_meta(nets, cfg, epoch, step):
    a = nets.arch
    return {
        "kind": KIND_IFS, "base_width": a.base_width, "n_res_blocks": a.n_res_blocks,
        "input_channels": a.input_channels, "output_channels": a.output_channels, "H": a.H, "W": a.W,
        "T": nets.T, "K": nets.num_classes, "block_size": cfg.block_size, "search_range": cfg.search_range,
        "input_mode": INPUT_MODES.index(cfg.input_mode), "epoch": epoch, "step": step,
        "app": "app" in cfg.tasks, "cat": "cat" in cfg.tasks, "mot": "mot" in cfg.tasks,
        "adv": "adv" in cfg.regs, "color": "color" in cfg.regs, "seed": cfg.seed,
    }


def save_ifs(path, nets, cfg, epoch, step):
    entries = ckpt.meta_entries(ifs_meta(nets, cfg, epoch, step))
    entries.update(ckpt.param_entries(nets.parameters()))
    ckpt.save(path, entries)


def _arch_from_meta(meta):
    return ArchConfig(int(meta["base_width"]), int(meta["n_res_blocks"]), int(meta["input_channels"]),
                      int(meta["output_channels"]), int(meta["H"]), int(meta["W"]))


def _read(path):
    try:
        return ckpt.load(path)
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc


def load_ifs(path, expect_arch=None):
    """Rebuild the five networks from a checkpoint. Returns ``(nets, meta)``."""
    entries = _read(path)
    meta = ckpt.read_meta(entries)
    if meta.get("kind") != KIND_IFS:
        raise FormatError(f"{path}: not an IFS checkpoint")
    arch = _arch_from_meta(meta)
    if expect_arch is not None and arch != expect_arch:
        raise FormatError(f"{path}: checkpoint architecture {arch} does not match {expect_arch}")
    nets = IFSNetworks(arch, int(meta["T"]), int(meta["K"]), seed=0)
    ckpt.restore_params(nets.parameters(), entries, path)
    return nets, meta


def config_from_meta(meta, base):
    tasks = tuple(t for t in TASKS if meta.get(t))
    regs = tuple(r for r in REGULARIZERS if meta.get(r))
    return replace(base, T=int(meta["T"]), block_size=int(meta["block_size"]),
                   search_range=int(meta["search_range"]), input_mode=INPUT_MODES[int(meta["input_mode"])],
                   base_width=int(meta["base_width"]), n_res_blocks=int(meta["n_res_blocks"]),
                   tasks=tasks or base.tasks, regs=regs)


# --------------------------------------------------------------------------
# IFS training loop


@dataclass
class TrainResult:
    checkpoint: str
    best_checkpoint: str
    loss_csv: str
    history: list = field(default_factory=list)
    steps: int = 0


def _as_manifest(manifest, K=None):
    return manifest if isinstance(manifest, Manifest) else load_manifest(manifest, K)


def train_ifs(cfg, manifest, out_dir, resume=None, progress=None):
    """Train F and its heads. Writes ``ifs.ckpt``, ``ifs_best.ckpt``, ``losses.csv``, ``epochs.csv``."""
    cfg.validate()
    manifest = _as_manifest(manifest)
    os.makedirs(out_dir, exist_ok=True)
    train_m, val_m = manifest.split("train"), manifest.split("val")
    if not len(train_m):
        raise ConfigError("manifest has no training clips")
    K = manifest.num_classes
    train_px = load_pixels(train_m, cfg.T)
    train = prepare_arrays(train_px, train_m.labels(), cfg)
    val = prepare_arrays(load_pixels(val_m, cfg.T), val_m.labels(), cfg) if len(val_m) else None
    H, W = train.x1.shape[2:]

    paths = TrainResult(os.path.join(out_dir, "ifs.ckpt"), os.path.join(out_dir, "ifs_best.ckpt"),
                        os.path.join(out_dir, "losses.csv"))
    epochs_csv = os.path.join(out_dir, "epochs.csv")
    start_epoch, step = 0, 0
    best = np.inf
    if resume:
        nets, meta = load_ifs(resume, cfg.arch(H, W))
        start_epoch, step = int(meta["epoch"]), int(meta["step"])
    else:
        nets = IFSNetworks(cfg.arch(H, W), cfg.T, K, seed=cfg.seed)
        with open(paths.loss_csv, "w") as f:
            f.write(",".join(CSV_COLUMNS) + "\n")
        with open(epochs_csv, "w") as f:
            f.write("epoch,lr,train_total,val_total\n")
    opt_g, opt_d = make_optimizers(nets, cfg)
    aug_rng = np.random.default_rng([cfg.seed, 7])

    for epoch in range(start_epoch, cfg.epochs):
        lr = cosine_lr(cfg.base_lr, epoch, cfg.epochs)
        order = epoch_order(len(train), cfg.seed, epoch)
        totals = []
        with open(paths.loss_csv, "a") as csv:
            for s in range(0, len(order), cfg.batch_size):
                batch = augment(train, train_px, order[s:s + cfg.batch_size], cfg, aug_rng, K)
                report = train_ifs_step(batch, nets, opt_g, opt_d, lr, cfg, step)
                step += 1
                totals.append(report.total)
                csv.write(report.csv_row(step, lr) + "\n")
                if cfg.max_steps and step >= cfg.max_steps:
                    break
        val_total = evaluate_ifs(nets, val, cfg).total if val is not None else float(np.mean(totals))
        row = {"epoch": epoch, "lr": lr, "train_total": float(np.mean(totals)), "val_total": val_total}
        paths.history.append(row)
        with open(epochs_csv, "a") as f:
            f.write(f"{epoch},{lr!r},{row['train_total']!r},{val_total!r}\n")
        log.info("epoch %d lr %.6f train %.4f val %.4f", epoch, lr, row["train_total"], val_total)
        if progress:
            progress(row)
        save_ifs(paths.checkpoint, nets, cfg, epoch + 1, step)
        if val_total < best:
            best = val_total
            save_ifs(paths.best_checkpoint, nets, cfg, epoch + 1, step)
        if cfg.max_steps and step >= cfg.max_steps:
            break
    paths.steps = step
    return paths


# --------------------------------------------------------------------------
# downstream classifier


def classifier_meta(arch, K, source, cfg):
    return {"kind": KIND_CLASSIFIER, "base_width": arch.base_width, "n_res_blocks": arch.n_res_blocks,
            "input_channels": arch.input_channels, "output_channels": arch.output_channels,
            "H": arch.H, "W": arch.W, "K": K, "T": cfg.T, "source": FRAME_SOURCES.index(source)}


def load_classifier(path):
    entries = _read(path)
    meta = ckpt.read_meta(entries)
    if meta.get("kind") != KIND_CLASSIFIER:
        raise FormatError(f"{path}: not a classifier checkpoint")
    net = build_classifier(_arch_from_meta(meta), int(meta["K"]), prefix="Cp")
    ckpt.restore_params(net.parameters(), entries, path)
    return net, meta


def classifier_accuracy(net, frames, labels, batch_size=64):
    correct = 0
    with no_grad():
        for s in range(0, len(labels), batch_size):
            logits = net(Tensor(frames[s:s + batch_size])).data
            correct += int((logits.argmax(axis=1) == labels[s:s + batch_size]).sum())
    return correct / max(1, len(labels))


def train_classifier(cfg, manifest, frame_source, out_dir, ifs_checkpoint=None, progress=None):
    """Train a fresh classifier on frames produced by ``frame_source``.

    Writes ``classifier.ckpt`` and ``accuracy.csv``; returns the list of
    per-epoch ``{epoch, lr, train_loss, val_acc}`` rows.
    """
    from .recognition import FrameSource

    cfg.validate()
    manifest = _as_manifest(manifest)
    os.makedirs(out_dir, exist_ok=True)
    source = FrameSource.create(frame_source, ifs_checkpoint, cfg)
    train_m, val_m = manifest.split("train"), manifest.split("val")
    K = manifest.num_classes
    train_px = load_pixels(train_m, source.T)
    train_x = source.frames(train_px)
    train_y = train_m.labels()
    val_x = source.frames(load_pixels(val_m, source.T)) if len(val_m) else None
    val_y = val_m.labels()
    if cfg.use_flip:
        mirrored = source.frames([flip_horizontal(p) for p in train_px])
        mirrored_y = np.array([flip_label(int(y), K) for y in train_y]) if cfg.directional else train_y

    H, W = train_x.shape[2:]
    arch = ArchConfig(cfg.base_width, cfg.n_res_blocks, train_x.shape[1], train_x.shape[1], H, W)
    net = build_classifier(arch, K, seed=cfg.seed + 1, prefix="Cp")
    opt = Adam(net.parameters(), cfg.classifier_lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng([cfg.seed, 11])
    curve = []
    with open(os.path.join(out_dir, "accuracy.csv"), "w") as f:
        f.write("epoch,lr,train_loss,val_acc\n")
    for epoch in range(cfg.classifier_epochs):
        lr = cosine_lr(cfg.classifier_lr, epoch, cfg.classifier_epochs)
        order = epoch_order(len(train_y), cfg.seed + 1, epoch)
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            if cfg.use_flip:
                pick = rng.random(len(idx)) < 0.5
                xb = np.where(pick[:, None, None, None], mirrored[idx], xb)
                yb = np.where(pick, mirrored_y[idx], yb)
            opt.zero_grad()
            loss = _term("l_cat", lambda: categorization_loss(net(Tensor(xb)), yb))
            loss.backward()
            opt.step(lr)
            losses.append(loss.item())
        acc = classifier_accuracy(net, val_x, val_y) if val_x is not None else float("nan")
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "val_acc": acc}
        curve.append(row)
        with open(os.path.join(out_dir, "accuracy.csv"), "a") as f:
            f.write(f"{epoch},{lr!r},{row['train_loss']!r},{acc!r}\n")
        log.info("classifier[%s] epoch %d loss %.4f val_acc %.3f", frame_source, epoch, row["train_loss"], acc)
        if progress:
            progress(row)
    entries = ckpt.meta_entries(classifier_meta(arch, K, frame_source, cfg))
    entries.update(ckpt.param_entries(net.parameters()))
    ckpt.save(os.path.join(out_dir, "classifier.ckpt"), entries)
    return curve

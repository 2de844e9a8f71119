"""Command-line entry point: ``ifsynth <subcommand> [flags]``.

Exit status is 0 on success, 1 on bad input (usage, config, validation or
format errors) and 2 on runtime failures (I/O, divergence, internal errors).
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import _accel
from .codec import compress_clip, reconstruct_clip
from .config import RunConfig, format_config, format_value, parse_config
from .dataset import generate_moving_shapes, load_manifest, normalize_clip
from .errors import IFSError, ValidationError
from .formats import read_cvid, read_rvid, write_cvid, write_ppm, write_rvid
from .recognition import SOURCES, FrameSource, evaluate_top1, synthesize_clip_summary
from .tensor import Tensor, no_grad
from .trainer import load_classifier, load_ifs, train_classifier, train_ifs

log = logging.getLogger("ifsynth")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# short flags that map onto RunConfig keys
_ALIASES = {"classes": "K", "clips": "num_clips", "block": "block_size", "search": "search_range"}


def _add_config_flags(p, aliases=()):
    g = p.add_argument_group("configuration (override --config values)")
    g.add_argument("--config", metavar="PATH", help="flat key = value file")
    defaults = RunConfig()
    for f in fields(RunConfig):
        g.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="V", default=None,
                       help=f"default {format_value(getattr(defaults, f.name))}")
    for alias in aliases:
        g.add_argument(f"--{alias}", dest=f"cfg_{_ALIASES[alias]}", metavar="V", default=None,
                       help=f"alias of --{_ALIASES[alias]}")


def _config(args):
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return parse_config(args.config, overrides)


def build_parser():
    p = _Parser(prog="ifsynth", description="Synthesise one informative frame per video clip.")
    p.add_argument("--jobs", type=int, default=None, help="worker threads for numeric kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("gen-data", help="write a moving-shapes dataset")
    s.add_argument("--out", required=True)
    _add_config_flags(s, ("classes", "clips"))

    s = sub.add_parser("encode", help="compress a .rvid clip into a .cvid file")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--block", type=int, default=8)
    s.add_argument("--search", type=int, default=4)

    s = sub.add_parser("train-ifs", help="train the frame synthesiser and its heads")
    s.add_argument("--data", required=True, help="dataset directory or manifest.txt")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(s)

    s = sub.add_parser("synthesize", help="write one synthetic frame per window of a clip as PPM")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("train-classifier", help="train a frame classifier on a frame source")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--source", choices=SOURCES, required=True)
    s.add_argument("--ifs-ckpt", help="IFS checkpoint (sources ifs, ifs_mot)")
    _add_config_flags(s)

    s = sub.add_parser("evaluate", help="video-level top-1 accuracy")
    s.add_argument("--data", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--source", choices=SOURCES, required=True)
    s.add_argument("--ifs-ckpt")
    s.add_argument("--split", default="val", choices=("train", "val"))
    s.add_argument("--samples", type=int, default=1, help="windows per video")
    s.add_argument("--report", help="write top1/videos/samples_per_video here")

    s = sub.add_parser("inspect", help="decode .cvid files, dump panels, print headers")
    s.add_argument("--decode", metavar="CVID", help="decode to raw frames")
    s.add_argument("--ckpt", help="IFS checkpoint for panels")
    s.add_argument("--in", dest="inp", help="clip (.rvid) for panels")
    s.add_argument("--out", help=".rvid for --decode, directory for panels")
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = _config(args)
    m = generate_moving_shapes(cfg.generator_config(), args.out)
    print(f"wrote {len(m)} clips to {args.out}")


def cmd_encode(args):
    clip = read_rvid(args.inp)
    comp = compress_clip(clip, args.block, args.search)
    write_cvid(args.out, comp)
    print(f"{args.inp}: T={comp.T} block={args.block} search={args.search} -> {args.out}")


def _write_config(out_dir, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.cfg"), "w") as f:
        f.write(format_config(cfg))


def cmd_train_ifs(args):
    cfg = _config(args)
    _write_config(args.out, cfg)
    t0 = time.time()
    res = train_ifs(cfg.train_config(), load_manifest(args.data, cfg.K), args.out, resume=args.resume,
                    progress=lambda r: print(f"epoch {r['epoch']} lr {r['lr']:.6g} train {r['train_total']:.4f} "
                                             f"val {r['val_total']:.4f}", flush=True))
    print(f"{res.steps} steps in {time.time() - t0:.1f}s; checkpoint {res.checkpoint}")


def cmd_synthesize(args):
    source = FrameSource.create("ifs", args.ckpt)
    frames = synthesize_clip_summary(source, read_rvid(args.inp))
    os.makedirs(args.out, exist_ok=True)
    for fr in frames:
        write_ppm(os.path.join(args.out, f"frame_{fr.offset:05d}.ppm"), fr.data)
    print(f"wrote {len(frames)} frames to {args.out}")


def cmd_train_classifier(args):
    cfg = _config(args)
    _write_config(args.out, cfg)
    curve = train_classifier(cfg.train_config(), load_manifest(args.data, cfg.K), args.source, args.out,
                             ifs_checkpoint=args.ifs_ckpt,
                             progress=lambda r: print(f"epoch {r['epoch']} loss {r['train_loss']:.4f} "
                                                      f"val_acc {r['val_acc']:.4f}", flush=True))
    print(f"final val_acc {curve[-1]['val_acc']:.4f}")


def cmd_evaluate(args):
    net, meta = load_classifier(args.classifier)
    source = FrameSource.create(args.source, args.ifs_ckpt)
    if args.source in ("i_frame", "ave"):
        source.T = int(meta["T"])
    manifest = load_manifest(args.data, int(meta["K"]))
    top1 = evaluate_top1(net, manifest, source, args.samples, args.split, args.report)
    print(f"top1={top1!r}")


def _panel(frame_chw):
    """Pad 1- or 2-channel maps to RGB for PPM output."""
    c = frame_chw.shape[0]
    if c == 2:
        return np.concatenate([frame_chw, np.zeros_like(frame_chw[:1])], axis=0)
    return frame_chw


def write_panels(ckpt, clip, out_dir):
    """Synthetic frame, recovered I-frame and per-t recovered motion / residual maps."""
    nets, meta = load_ifs(ckpt)
    source = FrameSource.create("ifs", ckpt)
    T, c = source.T, nets.arch.output_channels
    window = clip.pixels[:T]
    os.makedirs(out_dir, exist_ok=True)
    with no_grad():
        x_hat = Tensor(source.frames([window]))
        i_frame = nets.Fa(x_hat).data[0]
        motion = nets.Fm(x_hat).data[0]
    paths = {"synthetic": x_hat.data[0], "i_frame": i_frame, "input_i_frame": normalize_clip(window[0])}
    step = 2 + c
    for t in range(T - 1):
        paths[f"motion_{t + 2}"] = _panel(np.clip(motion[t * step:t * step + 2], -1, 1))
        paths[f"residual_{t + 2}"] = np.clip(motion[t * step + 2:(t + 1) * step], -1, 1)
    for name, img in paths.items():
        write_ppm(os.path.join(out_dir, f"{name}.ppm"), img)
    return sorted(paths)


def cmd_inspect(args):
    if args.decode:
        comp = read_cvid(args.decode)
        clip = reconstruct_clip(comp)
        if args.out:
            write_rvid(args.out, clip)
        t, c, h, w = clip.shape
        print(f"{args.decode}: T={t} C={c} H={h} W={w} block={comp.block_size} search={comp.search_range}")
        return
    if args.ckpt and args.inp and args.out:
        names = write_panels(args.ckpt, read_rvid(args.inp), args.out)
        print(f"wrote {len(names)} panels to {args.out}")
        return
    if args.ckpt:
        _, meta = load_ifs(args.ckpt)
        for key in sorted(meta):
            print(f"{key}={meta[key]:g}")
        return
    raise UsageError("inspect: give --decode CVID, or --ckpt CKPT [--in CLIP --out DIR]")


COMMANDS = {
    "gen-data": cmd_gen_data, "encode": cmd_encode, "train-ifs": cmd_train_ifs, "synthesize": cmd_synthesize,
    "train-classifier": cmd_train_classifier, "evaluate": cmd_evaluate, "inspect": cmd_inspect,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        if args.jobs:
            _accel.set_num_threads(args.jobs)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IFSError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

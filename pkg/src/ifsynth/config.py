"""Flat ``key = value`` run configuration shared by every CLI subcommand.

One RunConfig carries the training, architecture and data-generation knobs.
``#`` starts a comment; blank lines are ignored; command-line overrides are
applied after the file and win.
"""

import dataclasses
import os
import typing
from dataclasses import dataclass, fields

from .dataset import GeneratorConfig
from .errors import ConfigError
from .models import input_channels
from .trainer import TrainConfig


@dataclass
class RunConfig:
    # training
    epochs: int = 40
    batch_size: int = 16
    base_lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tasks: typing.Tuple[str, ...] = ("app", "cat", "mot")
    regs: typing.Tuple[str, ...] = ("adv", "color")
    input_mode: str = "compressed"
    d_every: int = 1
    swap_adv_labels: bool = False
    flip: str = "auto"
    directional: bool = True
    classifier_epochs: int = 20
    classifier_lr: float = 0.001
    max_steps: int = 0
    samples_per_video: int = 1
    # architecture (input_channels 0 = derived from input_mode and T)
    base_width: int = 16
    n_res_blocks: int = 3
    input_channels: int = 0
    output_channels: int = 3
    # data and codec
    num_clips: int = 1000
    K: int = 4
    T: int = 6
    H: int = 32
    W: int = 32
    shapes_per_clip: int = 2
    speed_range: typing.Tuple[float, ...] = (0.4, 0.8)
    val_fraction: float = 0.2
    min_size: int = 6
    max_size: int = 12
    block_size: int = 8
    search_range: int = 4
    seed: int = 0

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def generator_config(self):
        names = {f.name for f in fields(GeneratorConfig)}
        return GeneratorConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def validate(self):
        self.train_config().validate()
        self.generator_config().validate()
        derived = input_channels(self.input_mode, self.T, self.output_channels)
        if self.input_channels not in (0, derived):
            raise ConfigError(f"input_channels={self.input_channels} contradicts input_mode "
                              f"{self.input_mode} with T={self.T} (needs {derived})")
        if self.output_channels != 3:
            raise ConfigError("output_channels must be 3 (RGB clips)")
        if self.samples_per_video < 1:
            raise ConfigError("samples_per_video must be >= 1")
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _field_type(name):
    return typing.get_type_hints(RunConfig)[name]


def parse_value(key, text):
    """Convert the string ``text`` to the type of RunConfig field ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}")
    tp = _field_type(key)
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        item = typing.get_args(tp)[0]
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(item(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {text!r}") from exc


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg):
    return "".join(f"{f.name} = {format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return values


def parse_config(path=None, overrides=None):
    """Defaults, then the file at ``path`` (if any), then ``overrides``.

    ``overrides`` maps keys to strings (as typed on a command line) or to
    already-typed values.
    """
    values = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text, os.fspath(path)))
    for key, val in (overrides or {}).items():
        values[key] = parse_value(key, val) if isinstance(val, str) else val
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
    return RunConfig(**values).validate()

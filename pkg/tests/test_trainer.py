import csv
import math
import os

import numpy as np
import pytest

from ifsynth import checkpoint as ckpt
from ifsynth.dataset import GeneratorConfig, generate_moving_shapes
from ifsynth.errors import ConfigError, DivergenceError, FormatError, LoadError
from ifsynth.losses import CSV_COLUMNS
from ifsynth.models import IFSNetworks
from ifsynth.optim import cosine_lr
from ifsynth.tensor import Tensor, no_grad
from ifsynth.trainer import (TrainConfig, config_from_meta, load_classifier, load_ifs, load_pixels, make_optimizers,
                             prepare_arrays, save_ifs, train_classifier, train_ifs, train_ifs_step)


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=4, base_width=4, n_res_blocks=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    generate_moving_shapes(GeneratorConfig(num_clips=20, seed=1, val_fraction=0.2), str(out))
    return str(out)


@pytest.fixture(scope="module")
def arrays(data_dir):
    from ifsynth.dataset import load_manifest
    m = load_manifest(data_dir).split("train")
    return prepare_arrays(load_pixels(m, 6), m.labels(), tiny_cfg())


def build(cfg, seed=0):
    nets = IFSNetworks(cfg.arch(32, 32), cfg.T, 4, seed=seed)
    opt_g, opt_d = make_optimizers(nets, cfg)
    return nets, opt_g, opt_d


def snapshot(module):
    return [p.data.copy() for p in module.parameters()]


def changed(module, snap):
    return any(not np.array_equal(p.data, s) for p, s in zip(module.parameters(), snap))


def test_every_network_is_updated(arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg)
    before = {n: snapshot(m) for n, m in nets.networks().items()}
    train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)
    assert all(changed(m, before[n]) for n, m in nets.networks().items())


def test_app_only_reaches_f_and_fa(arrays):
    cfg = tiny_cfg(tasks=("app",), regs=())
    nets, opt_g, opt_d = build(cfg)
    before = {n: snapshot(m) for n, m in nets.networks().items()}
    rep = train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)
    assert {n for n, m in nets.networks().items() if changed(m, before[n])} == {"F", "Fa"}
    assert rep.total == rep.l_app and rep.l_cat == rep.l_mot == rep.r_adv_d == rep.r_color == 0


def test_phases_touch_disjoint_parameters(arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg)
    gen_names = ("F", "Fa", "Fm", "C")
    start = {n: snapshot(nets.networks()[n]) for n in gen_names}
    seen = {}
    real_d_step, real_g_step = opt_d.step, opt_g.step

    def d_step(lr=None):
        # phase 1: nothing on the generator side has moved yet
        seen["gen_moved_in_phase1"] = any(changed(nets.networks()[n], start[n]) for n in gen_names)
        real_d_step(lr)
        seen["d_after_phase1"] = snapshot(nets.D)

    def g_step(lr=None):
        real_g_step(lr)
        seen["d_after_phase2"] = snapshot(nets.D)

    opt_d.step, opt_g.step = d_step, g_step
    train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)
    assert seen["gen_moved_in_phase1"] is False
    assert all(np.array_equal(a, b) for a, b in zip(seen["d_after_phase1"], seen["d_after_phase2"]))


def test_d_every_skips_discriminator_updates(arrays):
    cfg = tiny_cfg(d_every=2)
    nets, opt_g, opt_d = build(cfg)
    d0 = snapshot(nets.D)
    rep = train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg, step=1)
    assert not changed(nets.D, d0) and rep.r_adv_d > 0
    train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg, step=2)
    assert changed(nets.D, d0)


def test_step_counts_advance(arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg)
    batch = arrays.take(np.arange(4))
    counts = []
    for _ in range(2):
        train_ifs_step(batch, nets, opt_g, opt_d, 1e-3, cfg)
        counts.append({p.step_count for p in nets.F.parameters()})
    assert counts == [{1}, {2}]


def test_first_step_is_bit_reproducible(arrays):
    cfg = tiny_cfg()
    reports = []
    for _ in range(2):
        nets, opt_g, opt_d = build(cfg, seed=3)
        reports.append(train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg))
    assert reports[0].csv_row(1, 1e-3) == reports[1].csv_row(1, 1e-3)


def test_total_is_sum_of_parts(arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg)
    rep = train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)
    assert rep.total == pytest.approx(rep.l_app + rep.l_cat + rep.l_mot + rep.r_adv_g + rep.r_color, abs=1e-6)


def test_nan_names_the_term(arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg)
    nets.Fm.head.bias.data[:] = np.nan
    with pytest.raises(DivergenceError, match="l_mot"):
        train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_cfg(tasks=("appearance",)).validate()
    with pytest.raises(ConfigError):
        tiny_cfg(tasks=(), regs=()).validate()
    with pytest.raises(ConfigError):
        tiny_cfg(flip="maybe").validate()
    d = TrainConfig()
    assert (d.base_lr, d.beta1, d.beta2, d.epochs, d.batch_size) == (0.001, 0.9, 0.999, 40, 16)


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path, arrays):
    cfg = tiny_cfg()
    nets, opt_g, opt_d = build(cfg, seed=4)
    train_ifs_step(arrays.take(np.arange(4)), nets, opt_g, opt_d, 1e-3, cfg)
    path = str(tmp_path / "a.ckpt")
    save_ifs(path, nets, cfg, 1, 1)
    back, meta = load_ifs(path, cfg.arch(32, 32))
    x = Tensor(arrays.inputs[:2])
    with no_grad():
        for name in IFSNetworks.NAMES:
            a = getattr(nets, name)(nets.F(x) if name != "F" else x).data
            b = getattr(back, name)(back.F(x) if name != "F" else x).data
            np.testing.assert_array_equal(a, b)
    assert all(p.step_count == 1 for p in back.F.parameters())
    assert (meta["epoch"], meta["step"]) == (1, 1)
    assert config_from_meta(meta, TrainConfig()).base_width == 4
    with pytest.raises(FormatError):
        load_ifs(path, tiny_cfg(base_width=8).arch(32, 32))


def test_tampered_checkpoint(tmp_path):
    cfg = tiny_cfg()
    nets, _, _ = build(cfg)
    path = tmp_path / "a.ckpt"
    save_ifs(str(path), nets, cfg, 0, 0)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (2**31).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_ifs(str(path))
    path.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(FormatError, match="magic"):
        ckpt.load(str(path))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(LoadError):
        load_ifs(str(tmp_path / "nope.ckpt"))


# -- training loops ----------------------------------------------------------------


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_train_ifs_writes_artifacts_and_follows_cosine(tmp_path, data_dir):
    cfg = tiny_cfg(epochs=4)
    res = train_ifs(cfg, data_dir, str(tmp_path))
    rows = read_csv(res.loss_csv)
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert len(rows) == res.steps == 4 * 4  # 16 training clips in batches of 4
    epochs = read_csv(os.path.join(tmp_path, "epochs.csv"))
    assert [float(r["lr"]) for r in epochs] == [cosine_lr(cfg.base_lr, e, cfg.epochs) for e in range(4)]
    assert {float(r["lr"]) for r in rows[:4]} == {cfg.base_lr}
    assert float(epochs[-1]["train_total"]) < float(epochs[0]["train_total"])
    assert os.path.exists(res.checkpoint) and os.path.exists(res.best_checkpoint)


def test_ifs_mot_reports_app_as_zero(tmp_path, data_dir):
    res = train_ifs(tiny_cfg(epochs=1, tasks=("cat", "mot")), data_dir, str(tmp_path))
    rows = read_csv(res.loss_csv)
    assert all(float(r["l_app"]) == 0 for r in rows)
    assert all(float(r["l_mot"]) > 0 for r in rows)
    _, meta = load_ifs(res.checkpoint)
    assert meta["app"] == 0 and meta["cat"] == 1


def test_resume_continues_step_count(tmp_path, data_dir):
    first = train_ifs(tiny_cfg(epochs=1), data_dir, str(tmp_path))
    assert first.steps == 4
    resumed = train_ifs(tiny_cfg(epochs=2), data_dir, str(tmp_path), resume=first.checkpoint)
    steps = [int(r["step"]) for r in read_csv(resumed.loss_csv)]
    assert steps == list(range(1, 9))
    assert resumed.steps == 8


def test_max_steps_stops_early(tmp_path, data_dir):
    res = train_ifs(tiny_cfg(epochs=3, max_steps=5), data_dir, str(tmp_path))
    assert res.steps == 5 and len(read_csv(res.loss_csv)) == 5


def test_train_classifier_sources(tmp_path, data_dir):
    cfg = tiny_cfg(classifier_epochs=2)
    curve = train_classifier(cfg, data_dir, "i_frame", str(tmp_path / "c"))
    assert len(curve) == 2 and all(0 <= r["val_acc"] <= 1 for r in curve)
    net, meta = load_classifier(str(tmp_path / "c" / "classifier.ckpt"))
    assert meta["K"] == 4
    assert len(read_csv(tmp_path / "c" / "accuracy.csv")) == 2
    ifs = train_ifs(tiny_cfg(epochs=1), data_dir, str(tmp_path / "ifs"))
    curve = train_classifier(cfg, data_dir, "ifs", str(tmp_path / "ci"), ifs_checkpoint=ifs.checkpoint)
    assert math.isfinite(curve[-1]["train_loss"])
    with pytest.raises(LoadError):
        train_classifier(cfg, data_dir, "ifs", str(tmp_path / "cx"), ifs_checkpoint=str(tmp_path / "none.ckpt"))
    with pytest.raises(ConfigError):
        train_classifier(cfg, data_dir, "ifs", str(tmp_path / "cy"))


def test_integer_meta_is_exact():
    meta = {"seed": 2**63 - 25, "neg": -70000, "flag": True, "kind": 0.0}
    back = ckpt.read_meta(ckpt.decode(ckpt.encode(ckpt.meta_entries(meta))))
    assert back == {"seed": 2**63 - 25, "neg": -70000, "flag": 1, "kind": 0.0}

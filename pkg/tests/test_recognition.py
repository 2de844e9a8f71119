import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifsynth.codec import RawClip
from ifsynth.dataset import ClipRecord, Manifest, denormalize, normalize_clip
from ifsynth.errors import ConfigError, ContractError
from ifsynth.formats import read_ppm, write_ppm, write_rvid
from ifsynth.models import ArchConfig, IFSNetworks, build_classifier
from ifsynth.recognition import (FrameSource, baseline_ave_frame, evaluate_top1, predict_video,
                                 synthesize_clip_summary, synthesize_frame, window_offsets)
from ifsynth.tensor import Tensor, no_grad
from ifsynth.trainer import TrainConfig, save_ifs


class LabelOracle:
    """Reads the label that the test videos stamp into pixel (0, 0, 0) of every frame."""

    def __init__(self, K):
        self.K = K

    def __call__(self, x):
        labels = np.rint((x.data[:, 0, 0, 0] + 1) * 127.5 / 40).astype(int)
        return Tensor(np.eye(self.K, dtype=np.float32)[labels] * 5)


class Uniform:
    def __call__(self, x):
        return Tensor(np.zeros((x.shape[0], 4), np.float32))


class CountCalls:
    def __init__(self, inner):
        self.inner, self.batches = inner, []

    def __call__(self, x):
        self.batches.append(x.shape[0])
        return self.inner(x)


def video(label, length=12, seed=0):
    px = np.random.default_rng(seed).integers(0, 256, (length, 3, 32, 32), dtype=np.uint8)
    px[:, 0, 0, 0] = 40 * label
    return RawClip(px)


@pytest.fixture
def manifest(tmp_path):
    recs = []
    labels = [0, 1, 2, 3, 0, 2, 1, 0]
    for i, lab in enumerate(labels):
        write_rvid(tmp_path / f"v{i}.rvid", video(lab, seed=i))
        recs.append(ClipRecord(f"v{i}.rvid", lab, "val" if i % 2 else "train"))
    return Manifest(recs, str(tmp_path), 4)


@pytest.fixture(scope="module")
def ifs_ckpt(tmp_path_factory):
    cfg = TrainConfig(base_width=4, n_res_blocks=1)
    nets = IFSNetworks(cfg.arch(32, 32), cfg.T, 4, seed=0)
    path = str(tmp_path_factory.mktemp("ifs") / "ifs.ckpt")
    save_ifs(path, nets, cfg, 0, 0)
    return path


# -- windows -----------------------------------------------------------------


@pytest.mark.parametrize("length,window,n", [(96, 12, 8), (13, 6, 2), (6, 6, 1)])
def test_window_counts(length, window, n):
    assert len(window_offsets(length, window)) == n


@settings(max_examples=100, deadline=None)
@given(length=st.integers(1, 200), window=st.integers(1, 30), k=st.one_of(st.none(), st.integers(1, 12)))
def test_window_accounting(length, window, k):
    if length < window:
        with pytest.raises(ContractError):
            window_offsets(length, window, k)
        return
    offs = window_offsets(length, window)
    assert len(offs) * window <= length < (len(offs) + 1) * window
    assert offs == list(range(0, len(offs) * window, window))
    sampled = window_offsets(length, window, k)
    assert set(sampled) <= set(offs) and sampled == sorted(sampled)
    assert len(sampled) == (len(offs) if k is None else min(k, len(offs)))
    if k is not None and k >= 2 and len(offs) >= 2:
        assert sampled[0] == 0 and sampled[-1] == offs[-1]


def test_short_video_is_rejected():
    with pytest.raises(ContractError):
        synthesize_clip_summary(FrameSource("i_frame", 6), video(0, length=5))


# -- baselines ---------------------------------------------------------------


def test_ave_of_static_clip_is_the_frame():
    frame = np.random.default_rng(0).integers(0, 256, (1, 3, 8, 8), dtype=np.uint8)
    np.testing.assert_allclose(baseline_ave_frame(np.repeat(frame, 5, 0)), normalize_clip(frame[0]), atol=1e-6)


def test_ave_of_black_and_white_is_midpoint():
    clip = np.stack([np.zeros((3, 4, 4), np.uint8), np.full((3, 4, 4), 255, np.uint8)])
    np.testing.assert_allclose(baseline_ave_frame(clip), 0.0, atol=1e-7)


def test_ave_streak_is_occupancy_fraction():
    T, W = 6, 16
    clip = np.zeros((T, 3, 4, W), np.uint8)
    for t in range(T):
        clip[t, :, :, 2 * t:2 * t + 3] = 255  # a 3-pixel bar stepping 2 pixels per frame
    occupancy = (clip[:, 0, 0, :] == 255).mean(axis=0)
    np.testing.assert_allclose(baseline_ave_frame(clip)[0, 0], -1 + 2 * occupancy, atol=1e-6)


def test_i_frame_source():
    v = video(2, length=6)
    f = synthesize_frame(FrameSource("i_frame", 6), v)
    np.testing.assert_array_equal(f.data, normalize_clip(v.pixels[0]))
    assert f.source == "i_frame"


def test_unknown_source():
    with pytest.raises(ConfigError):
        FrameSource("optical_flow", 6)
    with pytest.raises(ConfigError):
        FrameSource.create("ifs")


# -- IFS synthesis -------------------------------------------------------------


def test_synthesize_frame_is_deterministic(ifs_ckpt):
    src = FrameSource.create("ifs", ifs_ckpt)
    v = video(1, length=6)
    a, b = synthesize_frame(src, v), synthesize_frame(src, v)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.data.shape == (3, 32, 32) and np.all(np.abs(a.data) < 1)
    assert a.checkpoint == ifs_ckpt and a.source == "ifs"
    with pytest.raises(ContractError):
        synthesize_frame(src, video(1, length=5))


def test_clip_summary_matches_single_windows(ifs_ckpt):
    src = FrameSource.create("ifs", ifs_ckpt)
    v = video(3, length=13)
    frames = synthesize_clip_summary(src, v)
    assert [f.offset for f in frames] == [0, 6]
    for f in frames:
        # batched vs single forward differ only in float32 summation order
        single = synthesize_frame(src, v.pixels[f.offset:f.offset + 6]).data
        np.testing.assert_allclose(f.data, single, rtol=0, atol=1e-6)
    one = synthesize_clip_summary(src, video(3, length=6))
    np.testing.assert_array_equal(one[0].data, synthesize_frame(src, video(3, length=6)).data)


def test_ppm_round_trip_error_and_logits(tmp_path, ifs_ckpt):
    src = FrameSource.create("ifs", ifs_ckpt)
    frames = src.frames([video(i % 4, length=6, seed=i).pixels for i in range(20)])
    reloaded = []
    for i, f in enumerate(frames):
        write_ppm(tmp_path / f"{i}.ppm", f)
        back = read_ppm(tmp_path / f"{i}.ppm").astype(np.float32) / 127.5 - 1
        assert np.abs(back - f).max() <= 1 / 255 + 1e-6
        np.testing.assert_array_equal(read_ppm(tmp_path / f"{i}.ppm"), denormalize(f))
        reloaded.append(back)
    clf = build_classifier(ArchConfig(base_width=4, n_res_blocks=1, input_channels=3), 4, seed=2)
    with no_grad():
        a = clf(Tensor(frames)).data.argmax(1)
        b = clf(Tensor(np.stack(reloaded))).data.argmax(1)
    assert (a == b).mean() >= 1 - 1e-2


# -- evaluation --------------------------------------------------------------


def test_oracle_scores_one(manifest):
    assert evaluate_top1(LabelOracle(4), manifest, FrameSource("i_frame", 6), samples_per_video=2) == 1.0


def test_uniform_stub_predicts_class_zero(manifest):
    val = manifest.split("val")
    want = float(np.mean(val.labels() == 0))
    assert evaluate_top1(Uniform(), manifest, FrameSource("i_frame", 6)) == want
    pred, n = predict_video(Uniform(), FrameSource("ave", 6), video(3))
    assert (pred, n) == (0, 1)


def test_samples_per_video_controls_windows(manifest):
    counter = CountCalls(LabelOracle(4))
    evaluate_top1(counter, manifest, FrameSource("i_frame", 6), samples_per_video=1)
    assert counter.batches == [1] * 4
    counter.batches.clear()
    evaluate_top1(counter, manifest, FrameSource("i_frame", 6), samples_per_video=4)
    assert counter.batches == [2] * 4  # 12-frame videos hold two windows


def test_single_sample_equals_first_window():
    v = video(2)
    pred, _ = predict_video(LabelOracle(4), FrameSource("i_frame", 6), v, 1)
    assert pred == 2


def test_report_and_determinism(manifest, tmp_path, ifs_ckpt):
    src = FrameSource.create("ifs", ifs_ckpt)
    clf = build_classifier(ArchConfig(base_width=4, n_res_blocks=1, input_channels=3), 4, seed=1)
    path = tmp_path / "report.txt"
    a = evaluate_top1(clf, manifest, src, 2, report_path=str(path))
    b = evaluate_top1(clf, manifest, src, 2)
    assert a == b
    assert path.read_text() == f"top1={a!r}\nvideos=4\nsamples_per_video=2\n"


def test_empty_split(manifest):
    with pytest.raises(ContractError):
        evaluate_top1(Uniform(), manifest.subset(0), FrameSource("i_frame", 6))

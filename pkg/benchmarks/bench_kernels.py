"""Time the numba and numpy versions of each hot kernel side by side.

    python benchmarks/bench_kernels.py            # kernels only
    python benchmarks/bench_kernels.py --step     # plus one training step per backend

Kernel rows call the ``*_nb`` / ``*_np`` functions directly, so both run in
one process. The training-step rows start a subprocess per backend because
the backend is chosen from IFSYNTH_NO_NUMBA at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ifsynth import kernels
from ifsynth._accel import HAS_NUMBA


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(rng):
    # stem conv of a toy generator (N=16, Cin=28, 7x7, reflect-padded 38x38), and a 4x4/s2 downsampler
    stem = rng.standard_normal((16, 28, 38, 38)).astype(np.float32)
    down = rng.standard_normal((16, 16, 34, 34)).astype(np.float32)
    cols_stem = kernels._im2col_np(stem, 7, 7, 1)
    cols_down = kernels._im2col_np(down, 4, 4, 2)
    ref = rng.integers(0, 256, (3, 32, 32)).astype(np.int32)
    tgt = np.roll(ref, (1, 2), axis=(1, 2))
    cand = kernels.candidate_offsets(4)
    grid = rng.integers(-4, 5, (4, 4, 2)).astype(np.int64)
    return [
        ("im2col 7x7 s1", lambda: kernels._im2col_nb(stem, 7, 7, 1), lambda: kernels._im2col_np(stem, 7, 7, 1)),
        ("im2col 4x4 s2", lambda: kernels._im2col_nb(down, 4, 4, 2), lambda: kernels._im2col_np(down, 4, 4, 2)),
        ("col2im 7x7 s1", lambda: kernels._col2im_nb(cols_stem, 16, 28, 38, 38, 7, 7, 1),
         lambda: kernels._col2im_np(cols_stem, 16, 28, 38, 38, 7, 7, 1)),
        ("col2im 4x4 s2", lambda: kernels._col2im_nb(cols_down, 16, 16, 34, 34, 4, 4, 2),
         lambda: kernels._col2im_np(cols_down, 16, 16, 34, 34, 4, 4, 2)),
        ("block search 32x32 r4", lambda: kernels._block_search_nb(ref, tgt, 8, cand),
         lambda: kernels._block_search_np(ref, tgt, 8, cand)),
        ("warp 32x32", lambda: kernels._warp_nb(ref, grid, 8), lambda: kernels._warp_np(ref, grid, 8)),
    ]


STEP_SCRIPT = """
import time, numpy as np
from ifsynth.models import ArchConfig
from ifsynth.trainer import TrainConfig, ClipArrays, make_optimizers, train_ifs_step
from ifsynth.models import IFSNetworks
from ifsynth._accel import backend_name
cfg = TrainConfig(base_width={bw})
rng = np.random.default_rng(0)
n = {n}
batch = ClipArrays(rng.uniform(-1, 1, (n, 28, 32, 32)).astype(np.float32),
                   rng.uniform(-1, 1, (n, 3, 32, 32)).astype(np.float32),
                   rng.uniform(-1, 1, (n, 6, 3, 32, 32)).astype(np.float32),
                   rng.uniform(-1, 1, (n, 25, 32, 32)).astype(np.float32) * 0.1,
                   rng.integers(0, 4, n))
nets = IFSNetworks(cfg.arch(32, 32), 6, 4, seed=0)
opt_g, opt_d = make_optimizers(nets, cfg)
train_ifs_step(batch, nets, opt_g, opt_d, 1e-3, cfg)
times = []
for i in range({repeat}):
    t = time.perf_counter()
    train_ifs_step(batch, nets, opt_g, opt_d, 1e-3, cfg, i + 1)
    times.append(time.perf_counter() - t)
print(backend_name(), min(times))
"""


def time_step(no_numba, bw, n, repeat):
    env = dict(os.environ)
    if no_numba:
        env["IFSYNTH_NO_NUMBA"] = "1"
    else:
        env.pop("IFSYNTH_NO_NUMBA", None)
    code = STEP_SCRIPT.format(bw=bw, n=n, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, secs = out.stdout.split()
    return name, float(secs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    ap.add_argument("--step", action="store_true", help="also time a full IFS training step per backend")
    ap.add_argument("--base-width", type=int, default=8)
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args()
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for name, nb, npf in kernel_cases(rng):
        a, b = nb(), npf()  # also triggers compilation
        agree = np.array_equal(a, b)
        t_nb = best_of(nb, args.repeat, args.number)
        t_np = best_of(npf, args.repeat, args.number)
        print(f"{name:24s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:8.2f}  {agree}")

    if args.step:
        print(f"\ntraining step, base_width={args.base_width}, batch={args.batch}")
        for no_numba in (False, True):
            name, secs = time_step(no_numba, args.base_width, args.batch, args.repeat)
            print(f"{name:24s} {secs * 1e3:10.1f} ms")


if __name__ == "__main__":
    main()

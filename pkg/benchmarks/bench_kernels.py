"""Time the numba and numpy flavours of each kernel, then a full stack forward
under each backend (the backend is fixed at import, so that part runs in
subprocesses with REGIONDIT_NUMBA set).

    python benchmarks/bench_kernels.py [--repeat 5] [--no-forward]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from regiondit import kernels

FORWARD_SNIPPET = """
import time
from regiondit.dit import StackConfig, build_stack
from regiondit.masks import LatentGrid, RegionSpec, divide_regions
from regiondit.tensor import seeded_normal
stack = build_stack(StackConfig(injected=frozenset(range(39))))
masks = divide_regions(RegionSpec("height", 4), LatentGrid(32, 32))
states = [seeded_normal((333, 64), i, 1.0) for i in range(5)]
x = seeded_normal((1024, 64), 9, 1.0)
stack.forward(x, 0.5, states, masks)
times = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    stack.forward(x, 0.5, states, masks)
    times.append(time.perf_counter() - t0)
print(min(times))
"""


def cases():
    rng = np.random.default_rng(0)
    scores = (rng.standard_normal((4, 1024, 333)) * 3).astype(np.float32)
    hidden = rng.standard_normal((1024, 256)).astype(np.float32)
    x = rng.standard_normal((1024, 64)).astype(np.float32)
    g = np.ones(64)
    b = np.zeros(64)
    img_a = rng.random((256, 256))
    img_b = np.clip(img_a + 0.05 * rng.standard_normal(img_a.shape), 0, 1)
    s2 = scores.reshape(-1, 333)
    return [
        ("softmax 4x1024x333", lambda: kernels.softmax_rows_numba(s2), lambda: kernels.softmax_rows_numpy(s2)),
        ("gelu 1024x256", lambda: kernels.gelu_numba(hidden), lambda: kernels.gelu_numpy(hidden)),
        ("layer_norm 1024x64", lambda: kernels.layer_norm_numba(x, g, b, 1e-5),
         lambda: kernels.layer_norm_numpy(x, g, b, 1e-5)),
        ("ssim_map 256x256 w8", lambda: kernels.ssim_map_numba(img_a, img_b, 8, 1e-4, 9e-4),
         lambda: kernels.ssim_map_numpy(img_a, img_b, 8, 1e-4, 9e-4)),
        ("all_finite 4x1024x333", lambda: kernels.all_finite_numba(scores.ravel()),
         lambda: kernels.all_finite_numpy(scores)),
    ]


def best_of(fn, repeat):
    fn()  # warm-up / JIT
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def forward_time(flag: str, repeat: int) -> float:
    code = FORWARD_SNIPPET.format(repeat=repeat)
    env = dict(os.environ, REGIONDIT_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-forward", action="store_true")
    args = ap.parse_args()

    print(f"{'kernel':<24}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, nb, npy in cases():
        t_nb = best_of(nb, args.repeat) * 1e3
        t_np = best_of(npy, args.repeat) * 1e3
        print(f"{name:<24}{t_nb:>12.3f}{t_np:>12.3f}{t_np / t_nb:>9.2f}x")

    if not args.no_forward:
        reps = max(1, args.repeat // 2)
        t_nb = forward_time("1", reps)
        t_np = forward_time("0", reps)
        print(f"{'forward 39 blk 32x32':<24}{t_nb * 1e3:>12.1f}{t_np * 1e3:>12.1f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()

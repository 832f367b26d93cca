"""Compare the numba and pure-numpy depthwise convolution kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The first table times the kernels directly on training-sized batches. The
second times one full encoder forward+backward step in a fresh interpreter
per backend, selected with SPKREFINE_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spkrefine import kernels
from spkrefine._accel import HAS_NUMBA

SHAPES = [  # (batch, channels, frames, kernel)
    (40, 80, 100, 3),
    (40, 80, 100, 5),
    (40, 128, 100, 7),
    (1, 192, 1000, 7),
]

STEP = """
import time
import numpy as np
from spkrefine import encoder, kernels
w = encoder.init_weights(seed=0)
x = np.random.default_rng(0).standard_normal((40, 80, 100)).astype(np.float32)
def step():
    e, cache = encoder.forward(x, w, training=True, momentum=0.0, return_cache=True)
    encoder.backward(cache, np.ones_like(e), w)
step()
t = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    step()
    t.append(time.perf_counter() - t0)
print(kernels.BACKEND, min(t))
"""


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    print(f"{'shape (B,C,T,k)':<22}{'numpy fwd':>11}{'numba fwd':>11}{'numpy bwd':>11}{'numba bwd':>11}")
    for B, C, T, k in SHAPES:
        x = rng.standard_normal((B, C, T)).astype(np.float32)
        w = rng.standard_normal((C, k)).astype(np.float32)
        g = rng.standard_normal((B, C, T)).astype(np.float32)
        kernels.depthwise_forward_numba(x, w)       # compile outside the timing
        kernels.depthwise_backward_numba(g, x, w)
        row = []
        for fn, args in [(kernels.depthwise_forward_numpy, (x, w)), (kernels.depthwise_forward_numba, (x, w)),
                         (kernels.depthwise_backward_numpy, (g, x, w)),
                         (kernels.depthwise_backward_numba, (g, x, w))]:
            row.append(min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)) * 1e3)
        print(f"{str((B, C, T, k)):<22}" + "".join(f"{v:>9.2f}ms" for v in row))


def bench_encoder(repeat):
    print("\nencoder forward+backward, batch 40 x 100 frames")
    for flag in ("1", "0"):
        env = dict(os.environ, SPKREFINE_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", STEP.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<6}{float(out[1]) * 1e3:8.1f} ms")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    bench_kernels(args.repeat)
    bench_encoder(max(3, args.repeat // 4))


if __name__ == "__main__":
    main()

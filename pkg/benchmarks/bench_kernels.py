"""Time the compiled kernels against the numpy fallback on substitute-sized shapes.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from hdc_ifd import _fallback
from hdc_ifd._backend import get_kernels


def cases(rng):
    x_wide = rng.standard_normal((512, 1, 100))
    w_wide = rng.standard_normal((16, 1, 64))
    x_small = rng.standard_normal((512, 16, 18))
    w_small = rng.standard_normal((32, 16, 3))
    a_pool = rng.standard_normal((512, 16, 37))
    g_wide = rng.standard_normal((512, 16, 37))
    H = rng.standard_normal((960, 10000))
    labels = rng.integers(0, 10, 960)
    order = rng.permutation(960).astype(np.int64)
    C = rng.standard_normal((10, 10000))
    hnorm = np.linalg.norm(H, axis=1)
    return {
        "conv wide forward (512x100, k=64)": lambda k: k.conv1d_forward(x_wide, w_wide, np.zeros(16)),
        "conv small forward (512x16x18, k=3)": lambda k: k.conv1d_forward(x_small, w_small, np.zeros(32)),
        "conv wide backward": lambda k: k.conv1d_backward(x_wide, w_wide, g_wide),
        "maxpool forward (512x16x37)": lambda k: k.maxpool_forward(a_pool, 2),
        "hdc retrain epoch (960 x D=10000)": lambda k: k.hdc_retrain_epoch(C.copy(), H, hnorm, labels, order, 0.005),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    try:
        compiled = get_kernels("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return
    print(f"{'kernel':<38}{'numpy ms':>10}{'compiled ms':>13}{'speed-up':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<38}{t_py:>10.2f}{t_c:>13.2f}{t_py / t_c:>9.2f}x")


if __name__ == "__main__":
    main()

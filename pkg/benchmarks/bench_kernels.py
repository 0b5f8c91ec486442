"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 64]
"""
import argparse
import timeit

import numpy as np

from sirstlab import _pykernels as py

try:
    from sirstlab import _ckernels as cy
except ImportError:
    cy = None


def cases(size: int):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 16, size, size))
    cols = py.im2col(x, 3, 1, 1)
    pooled, idx = py.maxpool2_forward(x)
    g = rng.standard_normal(pooled.shape)
    img = rng.random((4 * size, 4 * size))
    mask = rng.random((4 * size, 4 * size)) < 0.3
    return [
        ("im2col 3x3", lambda m: m.im2col(x, 3, 1, 1)),
        ("col2im 3x3", lambda m: m.col2im(cols, x.shape, 3, 1, 1)),
        ("maxpool2 forward", lambda m: m.maxpool2_forward(x)),
        ("maxpool2 backward", lambda m: m.maxpool2_backward(g, idx)),
        ("label8", lambda m: m.label8(mask)),
        ("min_filter 5", lambda m: m.min_filter(img, 5)),
        ("directional median 5", lambda m: m.directional_median_max(img, 5)),
    ]


def best_of(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 1 << 12:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64, help="feature map extent")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled kernels not built; only the fallback is timed")
    print(f"{'kernel':<22} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, call in cases(args.size):
        tp = best_of(lambda: call(py), args.repeat) * 1e3
        if cy is None:
            print(f"{name:<22} {tp:>10.3f} {'-':>10} {'-':>8}")
            continue
        tc = best_of(lambda: call(cy), args.repeat) * 1e3
        print(f"{name:<22} {tp:>10.3f} {tc:>10.3f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()

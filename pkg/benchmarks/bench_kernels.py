"""Time the forward-backward kernel on each available backend.

Usage: python benchmarks/bench_kernels.py [--batch 2000] [--bins 48] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from uwbhmm import kernels


def make_inputs(batch, bins, seed=0):
    rng = np.random.default_rng(seed)
    b = rng.uniform(1e-3, 1.0, size=(batch, bins, 2))
    pi = np.array([0.9, 0.1])
    trans = np.array([[0.9, 0.1], [1e-3, 1 - 1e-3]])
    return b, pi, trans


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--bins", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    b, pi, trans = make_inputs(args.batch, args.bins)
    ref = None
    print(f"default backend: {kernels.BACKEND}; batch {args.batch} x {args.bins} bins")
    for name, fn in sorted(kernels.BACKENDS.items()):
        out = fn(b, pi, trans)
        if ref is None:
            ref = out
        dev = max(float(np.max(np.abs(x - y))) for x, y in zip(out, ref))
        best = min(timeit.repeat(lambda: fn(b, pi, trans), number=1, repeat=args.repeat))
        rate = args.batch / best
        print(f"{name:>8s}: {best * 1e3:9.2f} ms  ({rate:,.0f} sequences/s, max dev {dev:.1e})")


if __name__ == "__main__":
    main()

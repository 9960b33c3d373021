"""Time the compiled and numpy mixture kernels on density-grid sized inputs.

    python3 benchmarks/bench_kernels.py [--points N] [--components K] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from gmvae import kernels


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--points", type=int, default=10_000)
    p.add_argument("--components", type=int, default=2_000)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(args.points, args.dim))
    mu = rng.normal(size=(args.components, args.dim))
    var = rng.uniform(0.01, 1.0, size=(args.components, args.dim))
    lw = np.full(args.components, -np.log(args.components))

    impls = {"python": kernels.python_impl}
    if kernels.compiled_impl is not None:
        impls["cython"] = kernels.compiled_impl
    else:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"mixture_logpdf: {args.points} points x {args.components} components, dim {args.dim}")
    times = {}
    for name, impl in impls.items():
        impl.mixture_logpdf(pts, mu, var, lw)
        best = min(timeit.repeat(lambda: impl.mixture_logpdf(pts, mu, var, lw), number=1, repeat=args.repeat))
        times[name] = best
        print(f"  {name:7s} {best * 1e3:9.1f} ms  ({args.points * args.components / best / 1e6:7.1f} M pairs/s)")
    if len(times) == 2:
        diff = np.max(np.abs(impls["python"].mixture_logpdf(pts, mu, var, lw) - impls["cython"].mixture_logpdf(pts, mu, var, lw)))
        print(f"  speedup {times['python'] / times['cython']:.2f}x, max abs difference {diff:.2e}")


if __name__ == "__main__":
    main()

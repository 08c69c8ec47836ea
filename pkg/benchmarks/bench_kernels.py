"""Time the compiled Sinkhorn loop against the numpy fallback.

    python3 benchmarks/bench_kernels.py --sizes 64 256 1024 --iters 200
"""

import argparse
import time

import numpy as np

from mongegap import _sinkhorn_py
from mongegap.costs import cost_matrix, sqeuclidean
from mongegap.ot import epsilon_rule

try:
    from mongegap import _sinkhorn_ext
except ImportError:
    _sinkhorn_ext = None


def _time(fn, C, eps, iters, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        # tol=0 forces exactly `iters` iterations
        fn(C, eps, 0.0, iters)
        best = min(best, time.perf_counter() - t0)
    return best / iters


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--dim", type=int, default=4)
    args = p.parse_args(argv)
    if _sinkhorn_ext is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'n':>6} {'python ms/it':>13} {'cython ms/it':>13} {'speedup':>8}")
    for n in args.sizes:
        rng = np.random.default_rng(n)
        C = cost_matrix(sqeuclidean(), rng.normal(size=(n, args.dim)), rng.normal(size=(n, args.dim)) + 1)
        eps = epsilon_rule(C)
        tp = _time(_sinkhorn_py.sinkhorn_loop, C, eps, args.iters, args.repeats)
        if _sinkhorn_ext is None:
            print(f"{n:>6} {tp * 1e3:>13.4f} {'-':>13} {'-':>8}")
            continue
        tc = _time(_sinkhorn_ext.sinkhorn_loop, C, eps, args.iters, args.repeats)
        print(f"{n:>6} {tp * 1e3:>13.4f} {tc * 1e3:>13.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()

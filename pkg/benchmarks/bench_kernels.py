"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from secmarket import _kernels_py

try:
    from secmarket import _kernels as _compiled
except ImportError:
    _compiled = None


def cases():
    rng = np.random.default_rng(0)
    seeds = rng.integers(0, 2**63, size=7, dtype=np.uint64)
    signs = rng.choice(np.array([-1, 1], dtype=np.int8), size=7)
    X = rng.normal(size=(8, 2778))
    idx = np.arange(8, dtype=np.int64)
    return {
        "splitmix_stream(dim=2778)": lambda k: k.splitmix_stream(12345, 2778),
        "expand_mask(N=8, dim=2778)": lambda k: k.expand_mask(seeds, signs, 2778),
        "sq_dist_rows(8x8, dim=2778)": lambda k: k.sq_dist_rows(X, idx, idx),
    }


def bench(fn, backend, repeat):
    n, _ = timeit.Timer(lambda: fn(backend)).autorange()
    return min(timeit.repeat(lambda: fn(backend), number=n, repeat=repeat)) / n * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':30s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        py = bench(fn, _kernels_py, args.repeat)
        if _compiled is None:
            print(f"{name:30s} {py:10.1f} {'n/a':>10s} {'':>8s}")
            continue
        assert np.array_equal(fn(_kernels_py), fn(_compiled)), name
        cy = bench(fn, _compiled, args.repeat)
        print(f"{name:30s} {py:10.1f} {cy:10.1f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled NNGP maps against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 100 500 2000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from ewa import _kernels_py

try:
    from ewa import _kernels
except ImportError:
    _kernels = None


def _kernel(P, rng):
    X = rng.standard_normal((P, 50))
    return np.ascontiguousarray(X @ X.T / 50)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 2000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'map':6} {'P':>6} {'numpy [ms]':>12} {'compiled [ms]':>14} {'speedup':>8} {'max diff':>10}")
    for P in args.sizes:
        K = _kernel(P, rng)
        d = np.diag(K).copy()
        for name in ("erf_map", "relu_map"):
            py = getattr(_kernels_py, name)
            t_py = min(timeit.repeat(lambda: py(K, d, d, True), number=1, repeat=args.repeat))
            if _kernels is None:
                print(f"{name[:-4]:6} {P:6d} {1e3 * t_py:12.2f} {'-':>14} {'-':>8} {'-':>10}")
                continue
            cy = getattr(_kernels, name)
            t_cy = min(timeit.repeat(lambda: cy(K, d, d, True), number=1, repeat=args.repeat))
            diff = np.max(np.abs(cy(K, d, d, True) - py(K, d, d, True)))
            print(f"{name[:-4]:6} {P:6d} {1e3 * t_py:12.2f} {1e3 * t_cy:14.2f} {t_py / t_cy:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()

"""Compare the numba kernels with their pure-numpy fallbacks.

    python3 benchmarks/bench_backends.py [--repeat 5] [--end-to-end]

Kernel timings run both paths in one process. ``--end-to-end`` also times a
full fit plus bag prediction in two subprocesses, one with
VGPMIL_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from vgpmil import kernels, truncnorm

E2E_SNIPPET = """
import time
from vgpmil import FitConfig, SyntheticSpec, fit, generate_synthetic, predict_dataset
from vgpmil._backend import backend_name
ds = generate_synthetic(SyntheticSpec(n_bags=60, seed=0))
t0 = time.perf_counter()
m = fit(ds, FitConfig(lam=0.5))
t1 = time.perf_counter()
predict_dataset(m, ds, n_points=2**12)
t2 = time.perf_counter()
print(f"{backend_name():6s} fit {t1 - t0:7.2f}s  predict {t2 - t1:7.2f}s")
"""


def _best(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    X = rng.standard_normal((15000, 16))
    C = rng.standard_normal((100, 16))
    Z = rng.standard_normal((200, 16))
    d = 64
    A = rng.standard_normal((d, d))
    L = np.linalg.cholesky(A @ A.T / d + np.eye(d))
    b = rng.normal(0.5, 1.0, d)
    W = rng.random((2**12, d - 1))
    alpha = np.sqrt(truncnorm._first_primes(d - 1)) % 1.0
    shift = rng.random(d - 1)
    return [
        ("sqdist 15000x200, D=16",
         lambda: kernels._sqdist_numba(X, Z),
         lambda: kernels._sqdist_numpy(X, Z)),
        ("kmeans assign 15000 pts, 100 centres",
         lambda: kernels._assign_numba(X, C),
         lambda: kernels._assign_numpy(X, C)),
        ("genz integrand 4096 pts, dim 64",
         lambda: truncnorm._genz_numba(L, b, W),
         lambda: truncnorm._genz_numpy(L, b, W)),
        ("lattice estimate 2^14 pts, dim 64",
         lambda: truncnorm._genz_lattice_numba(L, b, alpha, shift, 2**14),
         lambda: truncnorm._genz_numpy(L, b, truncnorm._lattice_points(alpha, shift, 2**14)).mean()),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, fast, slow in kernel_cases(rng):
        t_fast = _best(fast, args.repeat)
        t_slow = _best(slow, args.repeat)
        print(f"{name:40s} {t_fast * 1e3:8.1f}ms {t_slow * 1e3:8.1f}ms {t_slow / t_fast:7.1f}x")

    if args.end_to_end:
        for flag in ("0", "1"):
            env = dict(os.environ, VGPMIL_DISABLE_NUMBA=flag)
            subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, check=True)


if __name__ == "__main__":
    main()

"""numba vs numpy timings for the hot kernels and one full time step.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--desk]

Both backends run in the same process via _kernels.set_backend; the first
numba call (compilation or cache load) is excluded from the timings.
Results are checked for agreement before anything is timed.
"""
import argparse
import statistics
import time

import numpy as np

from micropolar_rb import _kernels as K
from micropolar_rb.attractor import EnsembleSpec, make_ensemble
from micropolar_rb.basis import DomainSpec, build_all
from micropolar_rb.fields import grid_for
from micropolar_rb.integrator import CNAB2, GalerkinSystem, step
from micropolar_rb.params import DimensionlessParams


def timeit(fn, repeat):
    fn()  # warm up
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def cases(domain):
    g = grid_for(domain)
    rng = np.random.default_rng(0)
    shape = (g.Q, g.Nx, g.Ny)
    u = rng.standard_normal((3,) + shape)
    grads = rng.standard_normal((7, 3) + shape)
    th = 0.6 * rng.standard_normal(shape)
    z, w = g.z, g.wz
    A = rng.standard_normal((60, 900))
    B = rng.standard_normal((80, 900))
    off = np.array([0, 300, 600, 900])

    bases = build_all(domain)
    dp = DimensionlessParams(Ra=3000.0, Pr=10.0, K=0.05)
    system = GalerkinSystem(bases, dp)
    s0 = make_ensemble(EnsembleSpec(1, (0.3, 0.3, 0.3), 1, 16), bases)[0]
    s1, f0 = step(s0, 1e-3, CNAB2, system)

    return {
        f"advect {grads.shape}": lambda: K.advect(u, grads),
        f"part_sums {th.shape}": lambda: K.part_sums(th, z, w),
        "semidist 60x80 points, 900 coefficients": lambda: K.semidist(A, B, off),
        "one cnab2 step": lambda: step(s1, 1e-3, CNAB2, system, f0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--desk", action="store_true", help="8x8x32 desk resolution instead of 4x4x16")
    args = ap.parse_args(argv)
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    domain = DomainSpec(ax=2.0, ay=2.0, Mv=32, Nh=4) if args.desk else DomainSpec(ax=2.0, ay=2.0, Mv=16, Nh=2)
    prev = K.backend()
    try:
        fns = cases(domain)
        # agreement first
        for name, fn in fns.items():
            if name.startswith("one"):
                continue
            K.set_backend("numba")
            a = fn()
            K.set_backend("numpy")
            b = fn()
            if name.startswith("semidist"):
                assert a == b, name
            else:
                assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        print(f"{'kernel':45s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
        for name, fn in fns.items():
            t = {}
            for be in ("numpy", "numba"):
                K.set_backend(be)
                t[be] = timeit(fn, args.repeat)
            print(f"{name:45s} {1e3 * t['numpy']:10.3f} {1e3 * t['numba']:10.3f} {t['numpy'] / t['numba']:8.2f}")
    finally:
        K.set_backend(prev)


if __name__ == "__main__":
    main()

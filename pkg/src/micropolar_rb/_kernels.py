"""Hot loops: advection products, temperature-part sums, Hausdorff semidistance.

Each kernel has a numba version and a numpy version.  numba is used unless
``MICROPOLAR_RB_DISABLE_NUMBA=1`` is set at import time or
:func:`set_backend` selects numpy.  The Hausdorff kernels reduce in the same
order in both backends (sequential sums over coordinates, first index wins
ties) so they agree bit for bit.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

__all__ = [
    "backend",
    "set_backend",
    "set_threads",
    "advect",
    "part_sums",
    "semidist",
    "semidist_bruteforce",
]

# old system TBB: numba falls back to its own thread pool, nothing to report
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

try:  # pragma: no cover - import guard
    import numba
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

_USE_NUMBA = _HAVE_NUMBA and os.environ.get("MICROPOLAR_RB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def backend() -> str:
    return "numba" if _USE_NUMBA else "numpy"


def set_backend(name: str) -> None:
    global _USE_NUMBA
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _USE_NUMBA = name == "numba"


def set_threads(n: int) -> int:
    """Cap numba worker threads; returns the count actually used."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if not _HAVE_NUMBA:
        return 1
    n = min(int(n), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------------------
# numpy versions


def _advect_np(u, g):
    # (u . grad) f for every component of f; u (3, P), g (c, 3, P)
    return u[0] * g[:, 0] + u[1] * g[:, 1] + u[2] * g[:, 2]


def _part_sums_np(theta, z, wq):
    T = theta + (1.0 - z)[:, None, None]
    pos = np.maximum(T - 1.0, 0.0)
    neg = np.minimum(T, 0.0)
    w = wq[:, None, None]
    return float(np.sum(w * pos * pos)), float(np.sum(w * neg * neg))


def _row_dists_np(a, B, offsets):
    d = a[None, :] - B
    sq = d * d
    out = np.zeros(B.shape[0])
    for k in range(len(offsets) - 1):
        lo, hi = offsets[k], offsets[k + 1]
        if hi > lo:
            out = out + np.sqrt(np.cumsum(sq[:, lo:hi], axis=1)[:, -1])
        else:
            out = out + 0.0
    return out


def _semidist_np(A, B, offsets):
    best = -1.0
    ia = ib = 0
    for i in range(A.shape[0]):
        row = _row_dists_np(A[i], B, offsets)
        j = int(np.argmin(row))  # first index on ties
        if row[j] > best:
            best, ia, ib = float(row[j]), i, j
    return best, ia, ib


# ---------------------------------------------------------------------------
# numba versions

if _HAVE_NUMBA:

    @njit(cache=True)
    def _advect_nb(u, g):
        c, _, P = g.shape
        out = np.empty((c, P))
        for i in range(c):
            for p in range(P):
                out[i, p] = u[0, p] * g[i, 0, p] + u[1, p] * g[i, 1, p] + u[2, p] * g[i, 2, p]
        return out

    @njit(cache=True)
    def _part_sums_nb(theta, z, wq):
        Q, nx, ny = theta.shape
        pos = 0.0
        neg = 0.0
        for q in range(Q):
            sp = 0.0
            sn = 0.0
            base = 1.0 - z[q]
            for i in range(nx):
                for j in range(ny):
                    T = theta[q, i, j] + base
                    if T > 1.0:
                        sp += (T - 1.0) * (T - 1.0)
                    elif T < 0.0:
                        sn += T * T
            pos += wq[q] * sp
            neg += wq[q] * sn
        return pos, neg

    @njit(cache=True, parallel=True)
    def _row_min_nb(A, B, offsets):
        na, nb = A.shape[0], B.shape[0]
        nblk = offsets.shape[0] - 1
        mins = np.empty(na)
        args = np.empty(na, dtype=np.int64)
        for i in prange(na):
            bestv = np.inf
            bestj = 0
            for j in range(nb):
                tot = 0.0
                for k in range(nblk):
                    s = 0.0
                    for c in range(offsets[k], offsets[k + 1]):
                        d = A[i, c] - B[j, c]
                        s += d * d
                    tot = tot + np.sqrt(s)
                if tot < bestv:
                    bestv = tot
                    bestj = j
            mins[i] = bestv
            args[i] = bestj
        return mins, args


def _semidist_nb(A, B, offsets):
    mins, args = _row_min_nb(A, B, offsets)
    best, ia = -1.0, 0
    for i in range(len(mins)):  # sequential merge: first index wins ties
        if mins[i] > best:
            best, ia = float(mins[i]), i
    return best, ia, int(args[ia])


# ---------------------------------------------------------------------------
# public entry points


def advect(u, g):
    u = np.ascontiguousarray(u, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    shp = u.shape[1:]
    u2 = u.reshape(3, -1)
    g2 = g.reshape(g.shape[0], 3, -1)
    out = _advect_nb(u2, g2) if _USE_NUMBA else _advect_np(u2, g2)
    return out.reshape((g.shape[0],) + shp)


def part_sums(theta, z, wq):
    """(sum w (T-1)^+^2, sum w (T^-)^2) with T = theta + 1 - z; theta (Q, Nx, Ny)."""
    theta = np.ascontiguousarray(theta, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    wq = np.ascontiguousarray(wq, dtype=float)
    if _USE_NUMBA:
        p, n = _part_sums_nb(theta, z, wq)
        return float(p), float(n)
    return _part_sums_np(theta, z, wq)


def _prep(A, B, offsets):
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError("A and B must be 2-d with equal feature width")
    if offsets[0] != 0 or offsets[-1] != A.shape[1] or np.any(np.diff(offsets) < 0):
        raise ValueError("offsets must partition the feature axis")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("empty sample")
    return A, B, offsets


def semidist(A, B, offsets):
    """sup_a inf_b sum_k ||a_k - b_k||_2 over feature blocks; returns (value, ia, ib)."""
    A, B, offsets = _prep(A, B, offsets)
    return _semidist_nb(A, B, offsets) if _USE_NUMBA else _semidist_np(A, B, offsets)


def semidist_bruteforce(A, B, offsets):
    """Plain double loop in pure Python; the reference for the kernels above."""
    A, B, offsets = _prep(A, B, offsets)
    best, ia, ib = -1.0, 0, 0
    for i in range(A.shape[0]):
        rowbest, rowj = float("inf"), 0
        for j in range(B.shape[0]):
            tot = 0.0
            for k in range(len(offsets) - 1):
                s = 0.0
                for c in range(offsets[k], offsets[k + 1]):
                    d = float(A[i, c]) - float(B[j, c])
                    s += d * d
                tot = tot + float(np.sqrt(s))
            if tot < rowbest:
                rowbest, rowj = tot, j
        if rowbest > best:
            best, ia, ib = rowbest, i, rowj
    return best, ia, ib

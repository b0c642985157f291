"""Closed-form characteristic equations of the clamped wall-normal Stokes problem.

With q^2 = lam - kappa^2, the wall-normal velocity w(z) solving
(D^2 - kappa^2)^2 w = -lam (D^2 - kappa^2) w with w = w' = 0 at z = 0, 1
is symmetric or antisymmetric about z = 1/2 and q is a root of

    symmetric:      q sin(q/2) + kappa tanh(kappa/2) cos(q/2) = 0
    antisymmetric:  q cos(q/2) - kappa coth(kappa/2) sin(q/2) = 0

Used as an independent check on the Galerkin eigenvalues in :mod:`basis`.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

__all__ = ["poloidal_eigenvalues"]


def _roots(f, qmax, step=1e-2):
    q = np.arange(step, qmax, step)
    v = f(q)
    out = []
    for i in np.flatnonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0):
        out.append(brentq(f, q[i], q[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    return out


def poloidal_eigenvalues(kappa: float, count: int) -> np.ndarray:
    """Lowest ``count`` eigenvalues lam = q^2 + kappa^2 for wavenumber ``kappa > 0``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    a = kappa * math.tanh(kappa / 2)
    b = kappa / math.tanh(kappa / 2)

    def sym(q):
        return q * np.sin(q / 2) + a * np.cos(q / 2)

    def anti(q):
        return q * np.cos(q / 2) - b * np.sin(q / 2)

    qmax = 2 * math.pi * (count + 2)
    qs = sorted(_roots(sym, qmax) + _roots(anti, qmax))
    lam = np.array(qs[:count]) ** 2 + kappa ** 2
    if len(lam) < count:
        raise RuntimeError("not enough roots bracketed")
    return lam

"""Eigenbases of the scalar Laplacian, vector Laplacian and Stokes operator.

Geometry: horizontally periodic box (0, ax) x (0, ay) x (0, 1) with homogeneous
Dirichlet (no-slip) conditions on x3 = 0 and x3 = 1.

Every eigenfunction is stored as a real function

    phi(x, y, z) = Re[ P(z) * exp(i (k1 x + k2 y)) ]

with a complex 3-vector (or scalar) vertical profile ``P`` that already
carries the L2 normalisation and the cos/sin phase.  Wavevectors are
restricted to the half plane {n > 0} U {n = 0, m >= 0}; each nonzero
wavevector carries a cosine slot and a sine slot.

Vertical profiles are either sine series (scalar, vector, the ``w = 0``
Stokes families) or, for the wall-normal Stokes family, Legendre series
obtained from a Galerkin discretisation of the clamped fourth-order problem

    (D^2 - kappa^2)^2 w = -lam (D^2 - kappa^2) w,   w = w' = 0 at z = 0, 1.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as leg
import scipy.linalg

__all__ = [
    "BasisConfigError",
    "BasisConstructionError",
    "DomainSpec",
    "EigenBasis",
    "PoincareReport",
    "build_scalar_basis",
    "build_vector_basis",
    "build_stokes_basis",
    "build_all",
    "poloidal_modes",
    "poincare_audit",
    "gram_deviation",
    "gram_matrix_blocks",
    "cache_path",
    "stokes_validity",
    "save_basis",
    "load_basis",
    "cached_basis",
    "CACHE_FORMAT_VERSION",
]

log = logging.getLogger(__name__)

PI = math.pi
SCALAR, VECTOR, STOKES = "scalar-laplacian", "vector-laplacian", "stokes"
OPERATORS = (SCALAR, VECTOR, STOKES)

# Stokes families
FAM_MEAN, FAM_TOROIDAL, FAM_POLOIDAL = 0, 1, 2

CACHE_FORMAT_VERSION = 1
_MAGIC = b"MPRBBAS\x00"


class BasisConfigError(ValueError):
    """Invalid domain / truncation request."""


class BasisConstructionError(RuntimeError):
    """A vertical eigenproblem could not be solved."""


@dataclass(frozen=True)
class DomainSpec:
    """Channel geometry and spectral resolution.

    ``Nh`` bounds the horizontal wavenumber indices, ``|m|, |n| <= Nh``.
    ``Mv`` is the vertical polynomial resolution of the Stokes eigenproblem;
    ``Nz`` vertical modes are kept per family and wavevector (default
    ``Mv // 4``).  ``Nmodes`` truncates each operator's ascending spectrum
    (order: stokes, vector, scalar); ``None`` keeps every candidate.
    """

    ax: float = 2.0
    ay: float = 2.0
    Mv: int = 32
    Nh: int = 4
    Nz: int | None = None
    Nmodes: tuple = (None, None, None)

    def __post_init__(self):
        if not (self.ax > 0 and self.ay > 0):
            raise BasisConfigError("horizontal periods must be positive")
        if int(self.Mv) != self.Mv or self.Mv < 8:
            raise BasisConfigError(f"Mv must be an integer >= 8, got {self.Mv}")
        if int(self.Nh) != self.Nh or self.Nh < 1:
            raise BasisConfigError(f"Nh must be an integer >= 1, got {self.Nh}")
        nz = self.nz
        if nz < 1 or nz > self.Mv - 3:
            raise BasisConfigError(f"Nz must lie in [1, Mv - 3], got {nz}")
        nm = tuple(self.Nmodes)
        if len(nm) != 3:
            raise BasisConfigError("Nmodes needs one entry per operator (stokes, vector, scalar)")
        for v in nm:
            if v is not None and (int(v) != v or v < 1):
                raise BasisConfigError(f"Nmodes entries must be None or >= 1, got {v}")
        object.__setattr__(self, "Nmodes", tuple(None if v is None else int(v) for v in nm))

    @property
    def A(self) -> float:
        return self.ax * self.ay

    @property
    def nz(self) -> int:
        return int(self.Nz) if self.Nz is not None else max(1, self.Mv // 4)

    @property
    def Q(self) -> int:
        """Vertical Gauss-Legendre points, oversampled by 3/2 for triple products."""
        return (3 * self.Mv) // 2 + 8

    def nmodes_for(self, operator: str):
        return self.Nmodes[{STOKES: 0, VECTOR: 1, SCALAR: 2}[operator]]

    def with_nmodes(self, stokes=None, vector=None, scalar=None) -> "DomainSpec":
        return DomainSpec(self.ax, self.ay, self.Mv, self.Nh, self.Nz, (stokes, vector, scalar))

    def as_dict(self) -> dict:
        return {
            "ax": self.ax,
            "ay": self.ay,
            "Mv": int(self.Mv),
            "Nh": int(self.Nh),
            "Nz": self.Nz if self.Nz is None else int(self.Nz),
            "Nmodes": list(self.Nmodes),
        }

    @classmethod
    def from_dict(cls, d) -> "DomainSpec":
        return cls(d["ax"], d["ay"], d["Mv"], d["Nh"], d.get("Nz"), tuple(d.get("Nmodes", (None,) * 3)))


def wavevectors(domain: DomainSpec):
    """Integer index pairs (m, n) of the half plane, zero first."""
    Nh = int(domain.Nh)
    mn = [(0, 0)] + [(m, 0) for m in range(1, Nh + 1)]
    mn += [(m, n) for n in range(1, Nh + 1) for m in range(-Nh, Nh + 1)]
    mn = np.array(mn, dtype=np.int64)
    kvec = np.empty((len(mn), 2))
    kvec[:, 0] = 2 * PI * mn[:, 0] / domain.ax
    kvec[:, 1] = 2 * PI * mn[:, 1] / domain.ay
    return mn, kvec


@lru_cache(maxsize=16)
def _gauss(Q: int):
    x, w = leg.leggauss(Q)
    z = 0.5 * (x + 1.0)
    z.flags.writeable = False
    wz = 0.5 * w
    wz.flags.writeable = False
    return z, wz


def _kappa(k1, k2):
    # single definition: poloidal tables are keyed by this exact float
    return math.sqrt(k1 * k1 + k2 * k2)


def _sine(j, z, order=0):
    """Derivative of sqrt(2) sin(j pi z) of the given order."""
    a = j * PI
    return math.sqrt(2.0) * a ** order * np.sin(a * z + order * PI / 2)


# ---------------------------------------------------------------------------
# clamped fourth-order problem (wall-normal Stokes family)


@lru_cache(maxsize=8)
def _clamped_basis(Mv: int):
    """Legendre coefficients of (1 - x^2)^2 L_i(x), i = 0..Mv-4, as columns."""
    bump = leg.poly2leg([1.0, 0.0, -2.0, 0.0, 1.0])
    nb = Mv - 3
    C = np.zeros((Mv + 1, nb))
    for i in range(nb):
        e = np.zeros(i + 1)
        e[i] = 1.0
        c = leg.legmul(bump, e)
        C[: len(c), i] = c
    x, w = leg.leggauss(Mv + 2)
    V = leg.legvander(x, Mv)
    d1 = np.stack([_pad(leg.legder(C[:, i], 1), Mv + 1) for i in range(nb)], axis=1) * 2.0
    d2 = np.stack([_pad(leg.legder(C[:, i], 2), Mv + 1) for i in range(nb)], axis=1) * 4.0
    Phi0, Phi1, Phi2 = V @ C, V @ d1, V @ d2
    wz = 0.5 * w
    M00 = Phi0.T @ (wz[:, None] * Phi0)
    M11 = Phi1.T @ (wz[:, None] * Phi1)
    M22 = Phi2.T @ (wz[:, None] * Phi2)
    M20 = Phi2.T @ (wz[:, None] * Phi0)
    return C, M00, M11, M22, M20


def _pad(c, n):
    out = np.zeros(n)
    out[: len(c)] = c
    return out


def poloidal_modes(kappa: float, Mv: int, nz: int):
    """Lowest ``nz`` eigenpairs of the clamped wall-normal Stokes problem.

    Returns ``(eigenvalues, coefs)`` where ``coefs[j]`` holds the Legendre
    coefficients (in x = 2z - 1) of w_j, normalised so that the velocity
    field (i k w'/kappa^2, w) has unit L2 norm over z in (0, 1) and with
    w_j''(0) > 0.
    """
    if kappa <= 0:
        raise BasisConstructionError("wall-normal family requires kappa > 0")
    C, M00, M11, M22, M20 = _clamped_basis(int(Mv))
    k2 = kappa * kappa
    A = M22 - k2 * (M20 + M20.T) + k2 * k2 * M00
    B = M11 + k2 * M00
    s = 1.0 / np.sqrt(np.diag(B))
    A = s[:, None] * A * s[None, :]
    B = s[:, None] * B * s[None, :]
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    try:
        lam, vec = scipy.linalg.eigh(A, B, subset_by_index=[0, nz - 1])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise BasisConstructionError(f"vertical eigensolve failed for kappa={kappa!r}: {exc}") from exc
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise BasisConstructionError(f"non-positive or non-finite eigenvalues for kappa={kappa!r}")
    # eigh returns B-orthonormal vectors; velocity L2 norm^2 = c^T B c / kappa^2
    coefs = (C @ (s[:, None] * vec)).T * kappa
    d2 = np.array([leg.legval(-1.0, leg.legder(c, 2)) for c in coefs])
    coefs *= np.where(d2 < 0, -1.0, 1.0)[:, None]
    return lam, coefs


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoincareReport:
    operator: str
    smallest_eigenvalue: float
    deviation: float
    min_residual_first: float
    min_residual_second: float
    min_residual_first_quadrature: float
    samples: int

    @property
    def ok(self) -> bool:
        return (
            self.min_residual_first >= -1e-10
            and self.min_residual_second >= -1e-10
            and self.min_residual_first_quadrature >= -1e-10
        )


class EigenBasis:
    """Ordered, truncated eigenbasis of one operator.

    Per-mode descriptor arrays (length ``n``, ascending eigenvalue order):
    ``kidx``/``slot`` (dense position), ``m``, ``n_`` (wavenumber indices),
    ``j`` (vertical index, 1-based), ``trig`` (0 cos, 1 sin), ``comp``
    (vector component, or Stokes family).
    """

    def __init__(self, operator, domain, eigenvalues, table, profiles, dprofiles, poloidal):
        self.operator = operator
        self.domain = domain
        self.mn, self.kvec = wavevectors(domain)
        self.nk = len(self.mn)
        self.z, self.wz = _gauss(domain.Q)
        self.ncomp = 1 if operator == SCALAR else 3
        self.eigenvalues = _ro(np.asarray(eigenvalues, dtype=float))
        table = np.asarray(table, dtype=np.int64)
        self.table = _ro(table)
        self.kidx, self.slot, self.m, self.n_, self.j, self.trig, self.comp = (
            _ro(table[:, i].copy()) for i in range(7)
        )
        self.nslot = _nslot(operator, domain)
        self._profiles = {0: profiles, 1: dprofiles}
        self.poloidal = poloidal  # {kappa: (eigs, coefs)}
        dense_eig = np.zeros((self.nk, self.nslot))
        dense_eig[self.kidx, self.slot] = self.eigenvalues
        self.dense_eigenvalues = _ro(dense_eig)
        mask = np.zeros((self.nk, self.nslot), dtype=bool)
        mask[self.kidx, self.slot] = True
        self.mask = _ro(mask)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"EigenBasis({self.operator!r}, n={self.n}, lam1={self.eigenvalues[0]:.12g})"

    # dense <-> sorted coefficient layout
    def to_dense(self, coef):
        coef = np.asarray(coef)
        out = np.zeros(coef.shape[:-1] + (self.nk, self.nslot), dtype=coef.dtype)
        out[..., self.kidx, self.slot] = coef
        return out

    def from_dense(self, dense):
        return np.ascontiguousarray(np.asarray(dense)[..., self.kidx, self.slot])

    def profile(self, order: int = 0) -> np.ndarray:
        """Dense complex profiles d^order P / dz^order, shape (nk, nslot, ncomp, Q)."""
        if order not in self._profiles:
            self._profiles[order] = _ro(_build_profiles(self, self.z, order))
        return self._profiles[order]

    def wall_values(self, order: int = 0) -> np.ndarray:
        """Profiles evaluated at z = 0 and z = 1, shape (nk, nslot, ncomp, 2)."""
        return _build_profiles(self, np.array([0.0, 1.0]), order)

    def signature(self) -> tuple:
        return (self.operator, self.domain, self.eigenvalues.tobytes())


def _ro(a):
    a.flags.writeable = False
    return a


def _nslot(operator, domain):
    nz = domain.nz
    if operator == SCALAR:
        return 2 * nz
    if operator == VECTOR:
        return 2 * 3 * nz
    return 2 * 2 * nz  # toroidal + poloidal, cos + sin; the mean row reuses slots


def _slot(operator, nz, *, j, trig, comp):
    """Dense slot of a mode; j is 1-based."""
    if operator == SCALAR:
        return (j - 1) * 2 + trig
    if operator == VECTOR:
        return ((j - 1) * 2 + trig) * 3 + comp
    # stokes: comp is the family (mean modes reuse toroidal/poloidal slots for e1/e2)
    fam_slot = {FAM_TOROIDAL: 0, FAM_POLOIDAL: 1}[comp] if comp in (FAM_TOROIDAL, FAM_POLOIDAL) else None
    return ((j - 1) * 2 + trig) * 2 + fam_slot


def _build_profiles(b: EigenBasis, z, order):
    """Evaluate complex profiles of every retained mode at heights z."""
    A = b.domain.A
    z = np.asarray(z, dtype=float)
    out = np.zeros((b.nk, b.nslot, b.ncomp, len(z)), dtype=complex)
    jmax = int(b.j.max()) if b.n else 0
    sines = np.array([_sine(j, z, order) for j in range(1, jmax + 1)]).reshape(jmax, len(z))
    x = 2.0 * z - 1.0
    wtab = {}
    if b.operator == STOKES:
        V = leg.legvander(x, b.domain.Mv)
        for kap, (_, coefs) in b.poloidal.items():
            d0 = np.array([_pad(leg.legder(c, order), len(c)) for c in coefs]) * 2.0 ** order
            d1 = np.array([_pad(leg.legder(c, order + 1), len(c)) for c in coefs]) * 2.0 ** (order + 1)
            wtab[kap] = (d0 @ V.T, d1 @ V.T)
    for i in range(b.n):
        k, s = b.kidx[i], b.slot[i]
        m, n, j, trig, comp = b.m[i], b.n_[i], b.j[i], b.trig[i], b.comp[i]
        if m == 0 and n == 0:
            amp, phase = 1.0 / math.sqrt(A), 1.0
        else:
            amp, phase = math.sqrt(2.0 / A), (1.0 if trig == 0 else -1j)
        f = sines[j - 1]
        if b.operator == SCALAR:
            out[k, s, 0] = amp * phase * f
        elif b.operator == VECTOR:
            out[k, s, comp] = amp * phase * f
        else:
            k1, k2 = b.kvec[k]
            kap = _kappa(k1, k2)
            if comp == FAM_MEAN:
                # e1 modes are stored with trig=0, e2 modes with trig=1
                out[k, s, trig] = amp * f
            elif comp == FAM_TOROIDAL:
                out[k, s, 0] = amp * phase * (-k2 / kap) * f
                out[k, s, 1] = amp * phase * (k1 / kap) * f
            else:
                w, wd = wtab[kap][0][j - 1], wtab[kap][1][j - 1]
                out[k, s, 0] = amp * phase * 1j * (k1 / kap ** 2) * wd
                out[k, s, 1] = amp * phase * 1j * (k2 / kap ** 2) * wd
                out[k, s, 2] = amp * phase * w
    return out


# ---------------------------------------------------------------------------
# construction


def _candidates(operator, domain):
    """All candidate modes: list of (lam, j, m, n, trig, comp, kidx) plus the poloidal table."""
    mn, kvec = wavevectors(domain)
    nz = domain.nz
    rows = []
    poloidal = {}
    for kidx, ((m, n), (k1, k2)) in enumerate(zip(mn, kvec)):
        kap2 = k1 * k1 + k2 * k2
        zero = m == 0 and n == 0
        trigs = (0,) if zero else (0, 1)
        if operator in (SCALAR, VECTOR):
            comps = (0,) if operator == SCALAR else (0, 1, 2)
            for j in range(1, nz + 1):
                lam = kap2 + (j * PI) ** 2
                for trig in trigs:
                    for comp in comps:
                        rows.append((lam, j, m, n, trig, comp, kidx))
            continue
        if zero:
            for j in range(1, nz + 1):
                lam = (j * PI) ** 2
                for e in (0, 1):  # horizontal direction carried in the trig field
                    rows.append((lam, j, m, n, e, FAM_MEAN, kidx))
            continue
        kap = _kappa(k1, k2)
        if kap not in poloidal:
            try:
                poloidal[kap] = poloidal_modes(kap, domain.Mv, nz)
            except BasisConstructionError as exc:
                raise BasisConstructionError(f"wavenumber (m, n) = ({m}, {n}): {exc}") from exc
        plam = poloidal[kap][0]
        for j in range(1, nz + 1):
            for trig in trigs:
                rows.append((kap2 + (j * PI) ** 2, j, m, n, trig, FAM_TOROIDAL, kidx))
                rows.append((float(plam[j - 1]), j, m, n, trig, FAM_POLOIDAL, kidx))
    return rows, poloidal


def _mean_slot(j, e):
    # mean-flow modes occupy the toroidal cos/sin slots of the zero wavevector
    return ((j - 1) * 2 + e) * 2


def _build(operator, domain: DomainSpec) -> EigenBasis:
    rows, poloidal = _candidates(operator, domain)
    nmax = domain.nmodes_for(operator)
    if nmax is not None and nmax > len(rows):
        raise BasisConfigError(
            f"{operator}: requested {nmax} modes but only {len(rows)} candidates exist "
            f"(Nh={domain.Nh}, Nz={domain.nz})"
        )
    arr = np.array(rows, dtype=float)
    lam = arr[:, 0]
    j, m, n, trig, comp = (arr[:, i].astype(np.int64) for i in range(1, 6))
    # ascending eigenvalue; ties broken by (j, m, n, trig, comp)
    order = np.lexsort((comp, trig, n, m, j, lam))
    if nmax is not None:
        order = order[:nmax]
    nz = domain.nz
    kidx = arr[order, 6].astype(np.int64)
    slots = np.empty(len(order), dtype=np.int64)
    for t, i in enumerate(order):
        if operator == STOKES and comp[i] == FAM_MEAN:
            slots[t] = _mean_slot(j[i], trig[i])
        else:
            slots[t] = _slot(operator, nz, j=j[i], trig=trig[i], comp=comp[i])
    table = np.stack([kidx, slots, m[order], n[order], j[order], trig[order], comp[order]], axis=1)
    kv = wavevectors(domain)[1]
    used = {_kappa(*kv[k]) for k in kidx}
    poloidal = {k: v for k, v in poloidal.items() if k in used}
    b = EigenBasis(operator, domain, lam[order], table, None, None, poloidal)
    b._profiles = {}
    b.profile(0)
    b.profile(1)
    return b


def build_scalar_basis(domain: DomainSpec) -> EigenBasis:
    return _build(SCALAR, domain)


def build_vector_basis(domain: DomainSpec) -> EigenBasis:
    return _build(VECTOR, domain)


def build_stokes_basis(domain: DomainSpec) -> EigenBasis:
    return _build(STOKES, domain)


_BUILDERS = {SCALAR: build_scalar_basis, VECTOR: build_vector_basis, STOKES: build_stokes_basis}


def build_all(domain: DomainSpec, cache_dir=None):
    """(stokes, vector, scalar) bases, optionally through the disk cache."""
    return tuple(cached_basis(op, domain, cache_dir) for op in (STOKES, VECTOR, SCALAR))


# ---------------------------------------------------------------------------
# checks


def gram_matrix_blocks(b: EigenBasis, order_a=0, order_b=0):
    """Per-wavevector L2 Gram blocks of (d/dz)^order profiles, shape (nk, nslot, nslot)."""
    from .fields import pair_inner  # local import: fields depends on this module

    Pa, Pb = b.profile(order_a), b.profile(order_b)
    return pair_inner(Pa, Pb, b.wz, b.domain.A)


def gram_deviation(b: EigenBasis) -> float:
    """Max |G - I| over retained modes (blocks are exact: other wavevectors are orthogonal)."""
    G = gram_matrix_blocks(b)
    dev = 0.0
    for k in range(b.nk):
        sl = np.flatnonzero(b.mask[k])
        if len(sl) == 0:
            continue
        blk = G[k][np.ix_(sl, sl)]
        dev = max(dev, float(np.abs(blk - np.eye(len(sl))).max()))
    return dev


def stokes_validity(b: EigenBasis):
    """Max |div v| / ||v||_H1 on the quadrature grid and max wall value / ||v||_H1.

    The divergence is evaluated from the profiles without using the closed
    form, so the check exercises the stored data.
    """
    if b.operator != STOKES:
        raise BasisConfigError("stokes_validity needs a Stokes basis")
    P0, P1 = b.profile(0), b.profile(1)
    k1 = b.kvec[:, 0][:, None, None]
    k2 = b.kvec[:, 1][:, None, None]
    div = 1j * k1 * P0[:, :, 0] + 1j * k2 * P0[:, :, 1] + P1[:, :, 2]
    wall = b.wall_values(0)
    h1 = np.sqrt(b.dense_eigenvalues)
    with np.errstate(invalid="ignore", divide="ignore"):
        div_rel = np.where(b.mask, np.abs(div).max(axis=-1) / np.where(h1 > 0, h1, 1), 0.0)
        wall_rel = np.where(b.mask, np.abs(wall).max(axis=(-1, -2)) / np.where(h1 > 0, h1, 1), 0.0)
    return float(div_rel.max()), float(wall_rel.max())


def poincare_audit(b: EigenBasis, samples: int = 100, seed: int = 0, n_active: int = 50, quad_samples: int = 8):
    """Sample random fields in the span and record Poincare residual minima.

    First-order residual: ||grad v||^2 - pi^2 ||v||^2; second-order residual:
    ||L v||^2 - pi^2 ||grad v||^2 with L the operator itself.  Both by
    Parseval; the first-order one is also evaluated by quadrature on the
    physical grid for ``quad_samples`` fields.
    """
    from .fields import Field, Grid, norm_grad_sq_quadrature

    rng = np.random.default_rng(seed)
    lam = b.eigenvalues
    na = min(n_active, b.n)
    r1 = r2 = np.inf
    rq = np.inf
    grid = Grid(b.domain)
    for s in range(int(samples)):
        a = np.zeros(b.n)
        a[:na] = rng.standard_normal(na)
        a /= np.linalg.norm(a)
        l2 = float(a @ a)
        h1 = float(lam @ (a * a))
        h2 = float((lam * lam) @ (a * a))
        r1 = min(r1, h1 - PI ** 2 * l2)
        r2 = min(r2, h2 - PI ** 2 * h1)
        if s < quad_samples:
            f = Field(b, a)
            g2 = norm_grad_sq_quadrature(f, grid)
            rq = min(rq, g2 - PI ** 2 * l2)
    if samples <= 0:
        r1 = r2 = rq = 0.0
    return PoincareReport(
        operator=b.operator,
        smallest_eigenvalue=float(lam[0]),
        deviation=float(abs(lam[0] - PI ** 2)),
        min_residual_first=float(r1),
        min_residual_second=float(r2),
        min_residual_first_quadrature=float(rq if np.isfinite(rq) else 0.0),
        samples=int(samples),
    )


# ---------------------------------------------------------------------------
# disk cache
#
# layout (all little endian):
#   8 bytes magic, uint32 header length, UTF-8 JSON header
#   float64[n]            eigenvalues
#   int64[n, 7]           mode table (kidx, slot, m, n, j, trig, comp)
#   float64[n, ncomp, Q, 2] value profiles (re, im) in mode order
#   float64[n, ncomp, Q, 2] first-derivative profiles (re, im)
#   for each poloidal kappa listed in the header:
#       float64[nz] eigenvalues, float64[nz, Mv + 1] Legendre coefficients


def _cache_name(operator, domain):
    nm = "-".join("all" if v is None else str(v) for v in domain.Nmodes)
    return (
        f"{operator}_ax{domain.ax!r}_ay{domain.ay!r}_Mv{domain.Mv}_Nh{domain.Nh}"
        f"_Nz{domain.nz}_N{nm}.basis"
    )


def save_basis(b: EigenBasis, path) -> Path:
    path = Path(path)
    kappas = sorted(b.poloidal)
    header = {
        "format_version": CACHE_FORMAT_VERSION,
        "operator": b.operator,
        "domain": b.domain.as_dict(),
        "n": b.n,
        "ncomp": b.ncomp,
        "Q": int(b.domain.Q),
        "nz": b.domain.nz,
        "poloidal_kappas": [repr(k) for k in kappas],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    P0 = b.profile(0)[b.kidx, b.slot]
    P1 = b.profile(1)[b.kidx, b.slot]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(b.eigenvalues.astype("<f8").tobytes())
        fh.write(b.table.astype("<i8").tobytes())
        for P in (P0, P1):
            fh.write(np.stack([P.real, P.imag], axis=-1).astype("<f8").tobytes())
        for k in kappas:
            lam, coefs = b.poloidal[k]
            fh.write(np.asarray(lam).astype("<f8").tobytes())
            fh.write(np.asarray(coefs).astype("<f8").tobytes())
    return path


def load_basis(path) -> EigenBasis:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise BasisConfigError(f"{path}: not a basis cache file")
    (hl,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + hl].decode())
    if header["format_version"] != CACHE_FORMAT_VERSION:
        raise BasisConfigError(f"{path}: cache format {header['format_version']} != {CACHE_FORMAT_VERSION}")
    domain = DomainSpec.from_dict(header["domain"])
    n, ncomp, Q, nz = header["n"], header["ncomp"], header["Q"], header["nz"]
    off = 12 + hl

    def take(count, dtype):
        nonlocal off
        a = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += a.nbytes
        return a.copy()

    lam = take(n, "<f8")
    table = take(n * 7, "<i8").reshape(n, 7)
    profs = []
    for _ in range(2):
        p = take(n * ncomp * Q * 2, "<f8").reshape(n, ncomp, Q, 2)
        c = np.empty(p.shape[:-1], dtype=complex)
        c.real, c.imag = p[..., 0], p[..., 1]  # keeps signed zeros, so a resave is byte-identical
        profs.append(c)
    poloidal = {}
    for kr in header["poloidal_kappas"]:
        plam = take(nz, "<f8")
        coefs = take(nz * (domain.Mv + 1), "<f8").reshape(nz, domain.Mv + 1)
        poloidal[float(kr)] = (plam, coefs)
    b = EigenBasis(header["operator"], domain, lam, table, None, None, poloidal)
    dense = []
    for p in profs:
        d = np.zeros((b.nk, b.nslot, ncomp, Q), dtype=complex)
        d[b.kidx, b.slot] = p
        dense.append(_ro(d))
    b._profiles = {0: dense[0], 1: dense[1]}
    return b


_MEMO: dict = {}


def cached_basis(operator: str, domain: DomainSpec, cache_dir=None) -> EigenBasis:
    """Build a basis, reusing an in-process memo and an optional disk cache."""
    key = (operator, domain)
    if key in _MEMO:
        return _MEMO[key]
    b = None
    if cache_dir is not None:
        path = Path(cache_dir) / _cache_name(operator, domain)
        if path.exists():
            try:
                b = load_basis(path)
            except (BasisConfigError, ValueError, KeyError) as exc:
                log.warning("ignoring unreadable basis cache %s: %s", path, exc)
        if b is None:
            b = _BUILDERS[operator](domain)
            Path(cache_dir).mkdir(parents=True, exist_ok=True)
            save_basis(b, path)
    else:
        b = _BUILDERS[operator](domain)
    _MEMO[key] = b
    return b


def cache_path(operator, domain, cache_dir) -> Path:
    return Path(cache_dir) / _cache_name(operator, domain)

"""Fields on the channel: modal/physical transforms, differential operators, norms.

Physical samples live on a tensor grid: ``Nx x Ny`` equispaced horizontal
points (``Nx > 3 Nh`` so triple products of truncated fields are integrated
exactly) times the vertical Gauss-Legendre nodes of the basis.  Sample
arrays have shape ``(ncomp, Q, Nx, Ny)``.

Between the two representations sits the *profile* form: for every stored
wavevector k a complex vertical profile G_k(z) such that
f = sum_k Re[G_k(z) exp(i k.x)].  Linear differential operators act on
profiles without touching the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .basis import SCALAR, STOKES, VECTOR, DomainSpec, EigenBasis

__all__ = [
    "FieldError",
    "Grid",
    "grid_for",
    "Expr",
    "Field",
    "State",
    "NormSet",
    "pair_inner",
    "synthesize",
    "analyze",
    "galerkin_project",
    "profiles_to_samples",
    "samples_to_coefficients",
    "samples_to_hat",
    "hat_to_coefficients",
    "dense_profiles",
    "expr_profiles",
    "field_profiles",
    "basis_expr_profiles",
    "project_profiles",
    "profile_inner",
    "grad",
    "div",
    "rot",
    "laplacian",
    "identity",
    "norms",
    "norm_grad_sq_quadrature",
    "temperature_parts",
    "zero_state",
    "wall_expr_profiles",
    "graddiv_laplacian_terms",
]


class FieldError(ValueError):
    """Operand kind or resolution mismatch."""


# ---------------------------------------------------------------------------
# grid


class Grid:
    """Dealiased physical grid for one DomainSpec."""

    def __init__(self, domain: DomainSpec, factor: int = 1):
        from .basis import _gauss, wavevectors

        self.domain = domain
        self.factor = int(factor)
        n = 3 * int(domain.Nh) + 1
        self.Nx = self.Ny = (n + (n % 2)) * self.factor
        self.x = np.arange(self.Nx) * (domain.ax / self.Nx)
        self.y = np.arange(self.Ny) * (domain.ay / self.Ny)
        self.z, self.wz = _gauss(domain.Q)
        self.Q = len(self.z)
        mn, self.kvec = wavevectors(domain)
        self.im = np.mod(mn[:, 0], self.Nx)
        self.in_ = mn[:, 1].copy()
        row0 = np.flatnonzero((mn[:, 1] == 0) & (mn[:, 0] > 0))
        self.k_row0 = row0
        self.im_neg_row0 = np.mod(-mn[row0, 0], self.Nx)
        self.cell = domain.A / (self.Nx * self.Ny)
        # quadrature weight per grid point, shape (Q, 1, 1)
        self.w = (self.wz * self.cell)[:, None, None]

    def __eq__(self, other):
        return isinstance(other, Grid) and other.domain == self.domain and other.factor == self.factor

    def __hash__(self):
        return hash((self.domain, self.factor))

    @property
    def shape(self):
        return (self.Q, self.Nx, self.Ny)

    def mesh(self):
        """(Z, X, Y) coordinate arrays of shape (Q, Nx, Ny)."""
        return np.meshgrid(self.z, self.x, self.y, indexing="ij")

    def integrate(self, samples):
        """Quadrature over the box along the trailing three axes."""
        return np.sum(np.asarray(samples) * self.w, axis=(-3, -2, -1))


_GRIDS: dict = {}


def grid_for(domain: DomainSpec) -> Grid:
    g = _GRIDS.get(domain)
    if g is None:
        g = _GRIDS[domain] = Grid(domain)
    return g


def profiles_to_samples(G, grid: Grid):
    """Profiles (..., nk, Q) complex -> samples (..., Q, Nx, Ny) real."""
    G = np.asarray(G)
    Gq = np.swapaxes(G, -1, -2)  # (..., Q, nk)
    F = np.zeros(Gq.shape[:-1] + (grid.Nx, grid.Ny // 2 + 1), dtype=complex)
    F[..., grid.im, grid.in_] = 0.5 * Gq
    F[..., grid.im_neg_row0, 0] = 0.5 * np.conj(Gq[..., grid.k_row0])
    F[..., 0, 0] = Gq[..., 0].real
    return sfft.irfft2(F, s=(grid.Nx, grid.Ny), axes=(-2, -1)) * (grid.Nx * grid.Ny)


def samples_to_hat(samples, grid: Grid):
    """Samples (..., Q, Nx, Ny) -> integrals  int f exp(-i k.x) dx dy, shape (..., nk, Q)."""
    Fh = sfft.rfft2(np.asarray(samples, dtype=float), axes=(-2, -1))
    return np.swapaxes(Fh[..., grid.im, grid.in_], -1, -2) * grid.cell


def _kweights(nk):
    w = np.full(nk, 0.5)
    w[0] = 1.0
    return w


def pair_inner(Pa, Pb, wz, A):
    """L2 inner products of real functions Re[Pa e^{ikx}] and Re[Pb e^{ikx}] per wavevector.

    ``Pa`` (nk, sa, c, Q), ``Pb`` (nk, sb, c, Q) -> (nk, sa, sb).
    """
    g = np.einsum("kacq,kbcq,q->kab", Pa, np.conj(Pb), wz, optimize=True)
    return A * _kweights(Pa.shape[0])[:, None, None] * g.real


def project_profiles(G, basis: EigenBasis):
    """Dense coefficients (..., nk, nslot) of the L2 projection of profile-form data.

    ``G`` has shape (..., nk, ncomp, Q).
    """
    P = basis.profile(0)
    g = np.einsum("...kcq,kscq,q->...ks", G, np.conj(P), basis.wz, optimize=True)
    a = basis.domain.A * _kweights(basis.nk)[:, None] * g.real
    return a * basis.mask


def profile_inner(Ga, Gb, wz, A):
    """L2 inner product of two profile-form fields (nk, c, Q)."""
    g = np.einsum("kcq,kcq,q->k", Ga, np.conj(Gb), wz, optimize=True).real
    return float(A * np.dot(_kweights(Ga.shape[0]), g))


# ---------------------------------------------------------------------------
# linear differential expressions
#
# An Expr maps an input field with ``nin`` components to ``nout`` components.
# Each output component is a sum of terms  coeff * (i k1)^a (i k2)^b d_z^p f_c,
# keyed by (c, a, b, p).  Terms with equal keys are merged, so identities such
# as rot(grad f) = 0 cancel exactly rather than to rounding.


class Expr:
    __slots__ = ("nin", "terms")

    def __init__(self, nin, terms):
        self.nin = nin
        self.terms = tuple(terms)  # one dict per output component

    @property
    def nout(self):
        return len(self.terms)

    @classmethod
    def identity(cls, nin):
        return cls(nin, [{(c, 0, 0, 0): 1.0} for c in range(nin)])

    def _d(self, axis):
        out = []
        for comp in self.terms:
            new = {}
            for (c, a, b, p), v in comp.items():
                key = (c, a + (axis == 0), b + (axis == 1), p + (axis == 2))
                new[key] = new.get(key, 0.0) + v
            out.append(_clean(new))
        return out

    def component(self, i):
        return Expr(self.nin, [self.terms[i]])

    def __add__(self, other):
        if self.nin != other.nin or self.nout != other.nout:
            raise FieldError("Expr shape mismatch")
        return Expr(self.nin, [_merge(a, b, 1.0) for a, b in zip(self.terms, other.terms)])

    def __sub__(self, other):
        if self.nin != other.nin or self.nout != other.nout:
            raise FieldError("Expr shape mismatch")
        return Expr(self.nin, [_merge(a, b, -1.0) for a, b in zip(self.terms, other.terms)])

    def __mul__(self, s):
        return Expr(self.nin, [_clean({k: s * v for k, v in t.items()}) for t in self.terms])

    __rmul__ = __mul__

    def is_zero(self):
        return all(not t for t in self.terms)

    def max_order(self):
        return max((k[3] for t in self.terms for k in t), default=0)


def _clean(d):
    return {k: v for k, v in d.items() if v != 0.0}


def _merge(a, b, s):
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + s * v
    return _clean(out)


def identity(nin=1):
    return Expr.identity(nin)


def grad(e: Expr) -> Expr:
    if e.nout != 1:
        raise FieldError("grad needs a scalar operand")
    return Expr(e.nin, [e._d(ax)[0] for ax in range(3)])


def div(e: Expr) -> Expr:
    if e.nout != 3:
        raise FieldError("div needs a vector operand")
    parts = [e.component(i)._d(i)[0] for i in range(3)]
    return Expr(e.nin, [_merge(_merge(parts[0], parts[1], 1.0), parts[2], 1.0)])


def rot(e: Expr) -> Expr:
    if e.nout != 3:
        raise FieldError("rot needs a vector operand")
    d = [[e.component(i)._d(j)[0] for j in range(3)] for i in range(3)]  # d[i][j] = d_j e_i
    return Expr(
        e.nin,
        [_merge(d[2][1], d[1][2], -1.0), _merge(d[0][2], d[2][0], -1.0), _merge(d[1][0], d[0][1], -1.0)],
    )


def laplacian(e: Expr) -> Expr:
    out = []
    for i in range(e.nout):
        ci = e.component(i)
        acc = {}
        for ax in range(3):
            acc = _merge(acc, Expr(e.nin, ci._d(ax))._d(ax)[0], 1.0)
        out.append(acc)
    return Expr(e.nin, out)


def _apply_terms(expr: Expr, derivs, kvec):
    """Evaluate expr given input profiles per vertical order.

    ``derivs[p]`` has shape (nk, ..., nin, Q).  Returns (nk, ..., nout, Q).
    """
    ik1 = 1j * kvec[:, 0]
    ik2 = 1j * kvec[:, 1]
    base = derivs[0]
    shape = base.shape[:-2] + (expr.nout, base.shape[-1])
    out = np.zeros(shape, dtype=complex)
    extra = (None,) * (base.ndim - 3)
    for o, comp in enumerate(expr.terms):
        for (c, a, b, p), v in comp.items():
            fac = v * ik1 ** a * ik2 ** b
            out[..., o, :] += fac[(slice(None),) + extra + (None,)] * derivs[p][..., c, :]
    return out


def basis_expr_profiles(basis: EigenBasis, expr: Expr):
    """Expression applied to every dense basis slot: (nk, nslot, nout, Q)."""
    if expr.nin != basis.ncomp:
        raise FieldError(f"expression expects {expr.nin} components, basis has {basis.ncomp}")
    orders = {k[3] for t in expr.terms for k in t} or {0}
    derivs = {p: basis.profile(p) for p in orders | {0}}
    return _apply_terms(expr, derivs, basis.kvec)


# ---------------------------------------------------------------------------
# fields


class Field:
    """Immutable expansion in one eigenbasis; coefficients in basis order."""

    __slots__ = ("basis", "coef", "__dict__")

    def __init__(self, basis: EigenBasis, coef):
        coef = np.array(coef, dtype=float)
        if coef.shape != (basis.n,):
            raise FieldError(f"coefficient length {coef.shape} != basis size {basis.n}")
        coef.flags.writeable = False
        self.basis = basis
        self.coef = coef

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.n))

    @classmethod
    def from_dense(cls, basis, dense):
        return cls(basis, basis.from_dense(dense))

    @property
    def kind(self):
        return "scalar" if self.basis.ncomp == 1 else "vector3"

    @cached_property
    def dense(self):
        d = self.basis.to_dense(self.coef)
        d.flags.writeable = False
        return d

    @cached_property
    def samples(self):
        s = synthesize(self)
        s.flags.writeable = False
        return s

    def l2(self):
        return float(np.sqrt(self.coef @ self.coef))

    def h1semi(self):
        return float(np.sqrt((self.basis.eigenvalues * self.coef) @ self.coef))

    def __add__(self, other):
        _same(self, other)
        return Field(self.basis, self.coef + other.coef)

    def __sub__(self, other):
        _same(self, other)
        return Field(self.basis, self.coef - other.coef)

    def __mul__(self, s):
        return Field(self.basis, self.coef * float(s))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field({self.basis.operator}, n={self.basis.n}, l2={self.l2():.6g})"


def _same(a, b):
    if a.basis is not b.basis and a.basis.signature() != b.basis.signature():
        raise FieldError("fields live on different bases")


def _flat(basis: EigenBasis, order: int):
    """Profiles reshaped to (nk, nslot, ncomp*Q) for batched matmul; cached on the basis."""
    cache = basis.__dict__.setdefault("_flat_cache", {})
    if order not in cache:
        P = basis.profile(order)
        cache[order] = np.ascontiguousarray(P.reshape(basis.nk, basis.nslot, -1))
    return cache[order]


def dense_profiles(basis: EigenBasis, a, order: int = 0):
    """Profile form of dense coefficients a (nk, nslot): (nk, ncomp, Q)."""
    G = np.matmul(np.asarray(a, dtype=complex)[:, None, :], _flat(basis, order))[:, 0]
    return G.reshape(basis.nk, basis.ncomp, -1)


def hat_to_coefficients(hat, basis: EigenBasis):
    """Dense coefficients from horizontal transforms hat (..., ncomp, nk, Q)."""
    # int f phi = Re[P . conj(int f e^{-ikx})]
    H = np.conj(np.swapaxes(hat, -3, -2)) * basis.wz  # (..., nk, ncomp, Q)
    H = H.reshape(H.shape[:-2] + (-1, 1))
    g = np.matmul(_flat(basis, 0), H)[..., 0]
    return g.real * basis.mask


def field_profiles(f: Field, order: int = 0):
    """Profile form d^order/dz^order of f: (nk, ncomp, Q)."""
    return dense_profiles(f.basis, f.dense, order)


def expr_profiles(f: Field, expr: Expr):
    """Profile form of expr applied to f: (nk, nout, Q)."""
    if expr.nin != f.basis.ncomp:
        raise FieldError(f"expression expects {expr.nin} components, field has {f.basis.ncomp}")
    orders = {k[3] for t in expr.terms for k in t} | {0}
    derivs = {p: field_profiles(f, p) for p in orders}
    return _apply_terms(expr, derivs, f.basis.kvec)


def synthesize(f: Field, grid: Grid | None = None, expr: Expr | None = None):
    """Physical samples (ncomp, Q, Nx, Ny) of f, or of expr applied to f."""
    grid = grid or grid_for(f.basis.domain)
    if grid.domain != f.basis.domain:
        raise FieldError("grid and basis resolutions differ")
    G = field_profiles(f) if expr is None else expr_profiles(f, expr)
    return profiles_to_samples(np.swapaxes(G, 0, 1), grid)


def samples_to_coefficients(samples, basis: EigenBasis, grid: Grid | None = None):
    """Dense coefficients of the L2 projection of samples onto the basis span."""
    grid = grid or grid_for(basis.domain)
    if grid.domain != basis.domain:
        raise FieldError("grid and basis resolutions differ")
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-4:] != (basis.ncomp,) + grid.shape:
        raise FieldError(f"sample shape {samples.shape} does not match {(basis.ncomp,) + grid.shape}")
    return hat_to_coefficients(samples_to_hat(samples, grid), basis)


def analyze(samples, basis: EigenBasis, grid: Grid | None = None) -> Field:
    return Field.from_dense(basis, samples_to_coefficients(samples, basis, grid))


def galerkin_project(samples, stokes_basis: EigenBasis, grid: Grid | None = None) -> Field:
    """L2 projection of vector samples onto the Stokes span (discrete Leray projection)."""
    if stokes_basis.operator != STOKES:
        raise FieldError("galerkin_project needs the Stokes basis")
    return analyze(samples, stokes_basis, grid)


# ---------------------------------------------------------------------------
# state and norms


@dataclass(frozen=True)
class State:
    t: float
    u: Field
    gamma: Field
    theta: Field

    def __post_init__(self):
        if self.u.basis.operator != STOKES or self.gamma.basis.operator != VECTOR or self.theta.basis.operator != SCALAR:
            raise FieldError("State needs (Stokes, vector, scalar) fields")
        d = self.u.basis.domain
        if self.gamma.basis.domain.ax != d.ax or self.theta.basis.domain.ax != d.ax:
            raise FieldError("State fields live on different domains")

    @property
    def bases(self):
        return self.u.basis, self.gamma.basis, self.theta.basis

    def with_(self, **kw) -> "State":
        return State(kw.get("t", self.t), kw.get("u", self.u), kw.get("gamma", self.gamma), kw.get("theta", self.theta))


def zero_state(bases, t=0.0) -> State:
    su, sg, st = bases
    return State(float(t), Field.zeros(su), Field.zeros(sg), Field.zeros(st))


@dataclass(frozen=True)
class NormSet:
    l2_u: float
    l2_gamma: float
    l2_theta: float
    h1semi_u: float
    h1semi_gamma: float
    h1semi_theta: float
    V: float
    pos_part: float
    neg_part: float

    def as_row(self):
        return [
            self.l2_u, self.l2_gamma, self.l2_theta,
            self.h1semi_u, self.h1semi_gamma, self.h1semi_theta,
            self.V, self.pos_part, self.neg_part,
        ]


def temperature_parts(theta: Field, grid: Grid | None = None):
    """(||(T-1)^+||, ||T^-||) for T = theta + 1 - x3, by grid quadrature."""
    grid = grid or grid_for(theta.basis.domain)
    s = theta.samples[0]
    pos2, neg2 = _kernels.part_sums(s, grid.z, grid.wz * grid.cell)
    return math.sqrt(pos2), math.sqrt(neg2)


def norms(s: State, dp) -> NormSet:
    h1u, h1g = s.u.h1semi(), s.gamma.h1semi()
    pos, neg = temperature_parts(s.theta)
    return NormSet(
        l2_u=s.u.l2(),
        l2_gamma=s.gamma.l2(),
        l2_theta=s.theta.l2(),
        h1semi_u=h1u,
        h1semi_gamma=h1g,
        h1semi_theta=s.theta.h1semi(),
        V=h1u * h1u + dp.M * h1g * h1g,
        pos_part=pos,
        neg_part=neg,
    )


def norm_grad_sq_quadrature(f: Field, grid: Grid | None = None) -> float:
    """||grad f||^2 by grid quadrature (independent of the eigenvalues)."""
    grid = grid or grid_for(f.basis.domain)
    total = 0.0
    for c in range(f.basis.ncomp):
        e = grad(identity(f.basis.ncomp).component(c))
        g = synthesize(f, grid, e)
        total += float(grid.integrate(np.sum(g * g, axis=0)))
    return total


def wall_expr_profiles(f: Field, expr: Expr):
    """expr applied to f at z = 0 and z = 1: (nk, nout, 2)."""
    from .basis import _build_profiles

    orders = {k[3] for t in expr.terms for k in t} | {0}
    a = np.asarray(f.dense, dtype=complex)
    derivs = {p: np.einsum("ks,kscq->kcq", a, _build_profiles(f.basis, np.array([0.0, 1.0]), p)) for p in orders}
    return _apply_terms(expr, derivs, f.basis.kvec)


def graddiv_laplacian_terms(f: Field):
    """(grad div g, lap g), ||grad div g||^2 and the wall flux separating them.

    With phi = div g, lap g = grad phi - rot rot g and div rot = 0, so
        (grad phi, lap g) - ||grad phi||^2 = -[int phi (rot rot g)_3 dx dy]_{z=0}^{z=1}.
    The wall flux vanishes only for special fields; sine profiles leave it on.
    """
    if f.basis.ncomp != 3:
        raise FieldError("needs a vector field")
    I = identity(3)
    gd = expr_profiles(f, grad(div(I)))
    lap = expr_profiles(f, laplacian(I))
    lhs = profile_inner(gd, lap, f.basis.wz, f.basis.domain.A)
    rhs = profile_inner(gd, gd, f.basis.wz, f.basis.domain.A)
    phi = wall_expr_profiles(f, div(I))[:, 0, :]
    rr3 = wall_expr_profiles(f, rot(rot(I)).component(2))[:, 0, :]
    w = f.basis.domain.A * _kweights(f.basis.nk)
    flux = (w[:, None] * (phi * np.conj(rr3)).real).sum(axis=0)  # at z = 0, 1
    return lhs, rhs, float(-(flux[1] - flux[0]))

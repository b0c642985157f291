"""Initial data and the named desk-scale scenarios used by the CLI and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .basis import DomainSpec
from .fields import Field, State, analyze, grid_for, zero_state
from .params import DimensionlessParams

__all__ = [
    "INITIAL_KINDS",
    "Scenario",
    "SCENARIOS",
    "blob_amplitude",
    "hot_blob_state",
    "perturbed_conduction_state",
    "random_state",
    "initial_state",
]

INITIAL_KINDS = ("zero", "perturbed", "blob", "random")


def blob_amplitude(peak: float) -> float:
    """a with max_z [1 - z + a sin(pi z)] = peak, for peak > 1."""
    if not peak > 1.0:
        raise ValueError("peak must exceed 1")

    def top(a):
        zs = math.acos(min(1.0, 1.0 / (a * math.pi))) / math.pi
        return 1.0 - zs + a * math.sin(math.pi * zs) - peak

    return brentq(top, 1.0 / math.pi, 10.0 * peak, xtol=1e-15)


def hot_blob_state(bases, peak: float = 1.5, width: float = 0.35) -> State:
    """Conduction profile plus a Gaussian hot spot whose temperature peaks at ``peak``.

    theta0 = a sin(pi z) exp(-r^2 / (2 width^2)) with r the periodic distance
    to the box centre, projected onto the scalar basis.
    """
    stokes, vector, scalar = bases
    d = scalar.domain
    g = grid_for(d)
    Z, X, Y = g.mesh()
    dx = X - 0.5 * d.ax  # grid points lie in [0, a), so this is already the periodic offset
    dy = Y - 0.5 * d.ay
    a = blob_amplitude(peak)
    th = a * np.sin(math.pi * Z) * np.exp(-(dx * dx + dy * dy) / (2.0 * width * width))
    return State(0.0, Field.zeros(stokes), Field.zeros(vector), analyze(th[None], scalar, g))


def _lowest(b, amp, rng, n_active):
    a = np.zeros(b.n)
    na = min(n_active, b.n)
    a[:na] = amp * rng.standard_normal(na)
    return Field(b, a)


def perturbed_conduction_state(bases, amplitude: float = 1e-2, seed: int = 0, n_active: int = 16) -> State:
    """Zero flow and microrotation; small random theta in the lowest modes."""
    rng = np.random.default_rng(seed)
    s = zero_state(bases)
    return s.with_(theta=_lowest(bases[2], amplitude, rng, n_active))


def random_state(bases, radii=(0.3, 0.3, 0.3), seed: int = 0, n_active: int = 16) -> State:
    from .attractor import EnsembleSpec, make_ensemble

    return make_ensemble(EnsembleSpec(1, tuple(radii), seed, n_active), bases)[0]


def initial_state(kind: str, bases, *, amplitude=1e-2, radii=(0.3, 0.3, 0.3), seed=0, n_active=16, peak=1.5):
    if kind == "zero":
        return zero_state(bases)
    if kind == "perturbed":
        return perturbed_conduction_state(bases, amplitude, seed, n_active)
    if kind == "blob":
        return hot_blob_state(bases, peak)
    if kind == "random":
        return random_state(bases, radii, seed, n_active)
    raise ValueError(f"unknown initial condition {kind!r}; expected one of {INITIAL_KINDS}")


@dataclass(frozen=True)
class Scenario:
    """A reproducible run setting: domain, parameters, ensemble and sampling window."""

    name: str
    domain: DomainSpec
    params: DimensionlessParams
    radii: tuple
    n_members: int
    seed: int
    burn_in: float
    window: float
    cadence: float
    dt: float
    scheme: str
    Ks: tuple
    note: str = ""


# 8x8 horizontal modes (Nh = 4 on each side) by 32 vertical.
_DESK = DomainSpec(ax=2.0, ay=2.0, Mv=32, Nh=4)

SCENARIOS = {
    "subcritical": Scenario(
        name="subcritical",
        domain=_DESK,
        params=DimensionlessParams(Ra=100.0, Pr=1000.0, K=0.0),
        radii=(0.3, 0.3, 0.3),
        n_members=2,
        seed=7,
        burn_in=2.0,
        window=0.5,
        cadence=0.05,
        dt=1e-3,
        scheme="imex-euler",
        Ks=(0.1, 0.05, 0.02, 0.01, 0.0),
        note="Ra below onset: every attractor is the conduction point",
    ),
    "supercritical": Scenario(
        name="supercritical",
        domain=_DESK,
        params=DimensionlessParams(Ra=3000.0, Pr=10000.0, K=0.0),
        radii=(0.3, 0.3, 0.3),
        n_members=1,
        seed=7,
        burn_in=6.0,
        window=1.0,
        cadence=0.1,
        dt=1e-3,
        scheme="imex-euler",
        Ks=(0.1, 0.05, 0.02, 0.01, 0.0),
        note="Ra above the rigid-wall onset near 1708; Pr large enough for (H) with the calibrated c1",
    ),
}

"""Model constants: physical inputs, their dimensionless form, condition (H).

The solver only ever sees :class:`DimensionlessParams`. Physical constants
are accepted for convenience and reduced with the standard Boussinesq
scaling (length ``h``, time ``h**2/chi``, velocity ``chi/h``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

__all__ = [
    "ParameterError",
    "PhysicalParams",
    "DimensionlessParams",
    "HReport",
    "derive_dimensionless",
    "check_condition_H",
    "background_profile",
    "background_shift",
    "unshift",
    "read_keyvalue_file",
    "params_from_mapping",
    "PHYSICAL_KEYS",
    "DIMENSIONLESS_KEYS",
]

PI2 = math.pi ** 2


class ParameterError(ValueError):
    """A model constant lies outside its admissible domain."""


@dataclass(frozen=True)
class PhysicalParams:
    nu: float
    nu_r: float
    rho0: float
    alpha_bar: float
    g: float
    j: float
    alpha: float
    beta: float
    chi: float
    T_B: float
    h: float
    Lx1: float
    Lx2: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ParameterError(f"{f.name} must be finite, got {v!r}")
            if f.name in ("nu_r", "beta"):
                if v < 0:
                    raise ParameterError(f"{f.name} must be >= 0, got {v!r}")
            elif v <= 0:
                raise ParameterError(f"{f.name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class DimensionlessParams:
    """Scaled constants of the micropolar Boussinesq system.

    ``Gr``, ``eps``, ``A`` and ``D`` are derived in ``__post_init__`` so the
    identities ``Gr = Ra/Pr``, ``eps = 1/Pr``, ``A = ax*ay`` and
    ``D = max(2, M/L)`` hold by construction.
    """

    Ra: float
    Pr: float
    K: float = 0.0
    L: float = 1.0
    M: float = 1.0
    G: float = 1.0
    ax: float = 2.0
    ay: float = 2.0
    Gr: float = field(init=False)
    eps: float = field(init=False)
    A: float = field(init=False)
    D: float = field(init=False)

    def __post_init__(self):
        for name in ("Ra", "K", "M", "G", "L"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be a finite nonnegative number, got {v!r}")
        for name in ("Pr", "ax", "ay"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ParameterError(f"{name} must be > 0, got {v!r}")
        if self.L == 0:
            # D = max(2, M/L) is undefined; the damping is always assumed positive
            raise ParameterError("L must be > 0")
        object.__setattr__(self, "Gr", self.Ra / self.Pr)
        object.__setattr__(self, "eps", 1.0 / self.Pr)
        object.__setattr__(self, "A", self.ax * self.ay)
        object.__setattr__(self, "D", max(2.0, self.M / self.L))

    @property
    def N(self) -> float:
        """Microrotation ratio nu_r/(nu + nu_r) = K/(1+K)."""
        return self.K / (1.0 + self.K)

    def replace(self, **changes) -> "DimensionlessParams":
        base = {k: getattr(self, k) for k in ("Ra", "Pr", "K", "L", "M", "G", "ax", "ay")}
        base.update(changes)
        return DimensionlessParams(**base)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HReport:
    satisfied: bool
    margin_L: float
    margin_Pr: float
    c1_used: float


def derive_dimensionless(p: PhysicalParams) -> DimensionlessParams:
    Ra = p.alpha_bar * p.g * p.T_B * p.h ** 3 / (p.nu * p.chi)
    Pr = p.nu / p.chi
    return DimensionlessParams(
        Ra=Ra,
        Pr=Pr,
        K=p.nu_r / p.nu,
        L=p.alpha / (p.h ** 2 * p.nu),
        M=p.j / p.h ** 2,
        G=p.beta / (p.h ** 2 * p.nu),
        ax=p.Lx1 / p.h,
        ay=p.Lx2 / p.h,
    )


def check_condition_H(dp: DimensionlessParams, c1: float) -> HReport:
    """Evaluate both largeness assumptions; the report is always produced."""
    if not c1 > 0:
        raise ParameterError(f"Agmon constant must be > 0, got {c1!r}")
    margin_L = dp.L - 16.0 / (3.0 * PI2) * dp.K
    margin_Pr = dp.Pr - 2.0 * c1 * dp.Ra * dp.D ** 1.5 * math.sqrt(dp.A)
    return HReport(
        satisfied=bool(margin_L >= 0 and margin_Pr >= 0),
        margin_L=margin_L,
        margin_Pr=margin_Pr,
        c1_used=float(c1),
    )


# ---------------------------------------------------------------------------
# background temperature tau(x3) = 1 - x3


def background_profile(z):
    return 1.0 - np.asarray(z, dtype=float)


def background_shift(T, z):
    """theta = T - (1 - x3). ``z`` broadcasts against ``T`` (last axis vertical)."""
    return np.asarray(T, dtype=float) - background_profile(z)


def unshift(theta, z):
    return np.asarray(theta, dtype=float) + background_profile(z)


# ---------------------------------------------------------------------------
# flat key = value files

PHYSICAL_KEYS = tuple(f.name for f in fields(PhysicalParams))
DIMENSIONLESS_KEYS = ("Ra", "Pr", "K", "L", "M", "G", "ax", "ay")


def read_keyvalue_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParameterError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ParameterError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def params_from_mapping(kv: dict) -> DimensionlessParams:
    """Build parameters from either the physical or the dimensionless block.

    Giving keys from both blocks is an error; so is giving neither.
    """
    phys = {k: kv[k] for k in PHYSICAL_KEYS if k in kv}
    dim = {k: kv[k] for k in DIMENSIONLESS_KEYS if k in kv}
    # 'L' and 'M' are dimensionless-only keys; 'alpha', 'j', ... physical-only
    if phys and dim:
        raise ParameterError(
            "config mixes physical keys %s with dimensionless keys %s" % (sorted(phys), sorted(dim))
        )
    try:
        if phys:
            missing = [k for k in PHYSICAL_KEYS if k not in phys]
            if missing:
                raise ParameterError(f"physical block incomplete, missing {missing}")
            return derive_dimensionless(PhysicalParams(**{k: float(v) for k, v in phys.items()}))
        if dim:
            for k in ("Ra", "Pr"):
                if k not in dim:
                    raise ParameterError(f"dimensionless block requires {k}")
            return DimensionlessParams(**{k: float(v) for k, v in dim.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(str(exc)) from exc
    raise ParameterError("config contains neither a physical nor a dimensionless parameter block")

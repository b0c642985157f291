"""Late-time snapshot clouds, Hausdorff semidistances and the K -> 0 experiments."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .audit import AuditConfig, Series, enstrophy_ball_audit
from .fields import Field, State
from .integrator import CNAB2, MICROPOLAR, NEWTONIAN, GalerkinSystem, integrate
from .params import DimensionlessParams, check_condition_H

__all__ = [
    "AttractorError",
    "EnsembleSpec",
    "AttractorSample",
    "SemidistReport",
    "GrowthRecord",
    "make_ensemble",
    "sample_omega_limit",
    "features",
    "hausdorff_semidist",
    "k_sweep",
    "k_max",
    "gamma_on_A0_audit",
    "newtonian_projection_compare",
    "continuous_dependence_probe",
    "state_distance",
]

log = logging.getLogger(__name__)
METRICS = ("X", "Z")


class AttractorError(ValueError):
    """Precondition of an attractor experiment violated."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Initial states drawn from a coefficient box, rescaled to fixed L2 radii.

    Only the ``n_active`` lowest modes of each field are excited.  Radii are
    exact: member i has ||u|| = radii[0], ||gamma|| = radii[1],
    ||theta|| = radii[2] (a zero radius gives a zero field).
    """

    n_members: int = 2
    radii: tuple = (0.5, 0.5, 0.5)
    seed: int = 0
    n_active: int = 16

    def __post_init__(self):
        if self.n_members < 1:
            raise AttractorError("ensemble needs at least one member")
        if len(self.radii) != 3 or any(r < 0 for r in self.radii):
            raise AttractorError("radii must be three nonnegative numbers")


def make_ensemble(spec: EnsembleSpec, bases, t0: float = 0.0) -> list:
    rng = np.random.default_rng(spec.seed)
    members = []
    for _ in range(spec.n_members):
        fields_ = []
        for b, r in zip(bases, spec.radii):
            a = np.zeros(b.n)
            na = min(spec.n_active, b.n)
            box = rng.uniform(-1.0, 1.0, na)
            nrm = np.linalg.norm(box)
            if r > 0 and nrm > 0:
                a[:na] = box * (r / nrm)
            fields_.append(Field(b, a))
        members.append(State(float(t0), *fields_))
    return members


@dataclass
class AttractorSample:
    states: list
    params: DimensionlessParams
    model: str
    t_burn: float
    t_end: float
    member: np.ndarray  # ensemble index of each state
    meta: dict = field(default_factory=dict)

    @property
    def K(self):
        return 0.0 if self.model == NEWTONIAN else self.params.K

    def __len__(self):
        return len(self.states)


def features(sample_states, M: float, metric: str):
    """Feature matrix and block offsets so that the metric is a sum of block 2-norms."""
    if metric not in METRICS:
        raise AttractorError(f"unknown metric {metric!r}")
    rows = []
    for s in sample_states:
        u, g, th = s.u, s.gamma, s.theta
        if metric == "X":
            rows.append(np.concatenate([u.coef, math.sqrt(M) * g.coef, th.coef]))
        else:
            rows.append(
                np.concatenate(
                    [
                        np.sqrt(u.basis.eigenvalues) * u.coef,
                        math.sqrt(M) * np.sqrt(g.basis.eigenvalues) * g.coef,
                        np.sqrt(th.basis.eigenvalues) * th.coef,
                    ]
                )
            )
    s0 = sample_states[0]
    nu, ng, nt = s0.u.basis.n, s0.gamma.basis.n, s0.theta.basis.n
    return np.array(rows), np.array([0, nu, nu + ng, nu + ng + nt])


def state_distance(a: State, b: State, M: float, metric: str = "X") -> float:
    F, off = features([a, b], M, metric)
    return _kernels.semidist(F[:1], F[1:], off)[0]


@dataclass(frozen=True)
class SemidistReport:
    value: float
    ia: int
    ib: int
    metric: str


def hausdorff_semidist(A, B, metric: str = "X", M: float | None = None) -> SemidistReport:
    """sup_{a in A} inf_{b in B} rho(a, b) over two finite samples.

    ``A`` and ``B`` are AttractorSamples or plain lists of States; for lists
    the micro-inertia weight ``M`` must be given.
    """
    if metric not in METRICS:
        raise AttractorError(f"unknown metric {metric!r}")
    Ms = {x.params.M for x in (A, B) if isinstance(x, AttractorSample)}
    if len(Ms) > 1:
        raise AttractorError("samples use different M; the metric weights would differ")
    if M is None:
        if not Ms:
            raise AttractorError("M is required for plain state lists")
        M = Ms.pop()
    SA = A.states if isinstance(A, AttractorSample) else list(A)
    SB = B.states if isinstance(B, AttractorSample) else list(B)
    FA, off = features(SA, M, metric)
    FB, offb = features(SB, M, metric)
    if not np.array_equal(off, offb):
        raise AttractorError("samples live on different bases")
    v, ia, ib = _kernels.semidist(FA, FB, off)
    return SemidistReport(float(v), int(ia), int(ib), metric)


def _run_members(members, fn, threads):
    if threads <= 1 or len(members) == 1:
        return [fn(m) for m in members]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, members))  # order preserved


def sample_omega_limit(
    members,
    dp: DimensionlessParams,
    *,
    burn_in: float,
    window: float,
    cadence: float,
    dt: float,
    scheme: str = CNAB2,
    model: str = MICROPOLAR,
    threads: int = 1,
    system: GalerkinSystem | None = None,
    c1: float | None = None,
) -> AttractorSample:
    """Integrate every member to burn_in + window; keep states in the window every ``cadence``.

    With ``c1`` the enstrophy-ball entry time t* of every member is recorded
    in ``meta["t_star"]`` and a warning is logged when burn_in < max t*.
    """
    if burn_in < 0 or not window > 0 or not cadence > 0 or not dt > 0:
        raise AttractorError("need burn_in >= 0 and window, cadence, dt > 0")
    members = list(members)
    system = system or GalerkinSystem(members[0].bases, dp, model)
    every = max(1, int(round(cadence / dt)))
    horizon = burn_in + window
    system.solver(horizon / max(1, int(round(horizon / dt))), 1.0)  # warm caches before threading
    system.solver(horizon / max(1, int(round(horizon / dt))), 0.5)

    def run(s0):
        tr = integrate(s0, horizon, dp, dt=dt, scheme=scheme, model=model, sample_every=every, system=system)
        keep = [s for s in tr.states if s.t - s0.t >= burn_in - 1e-9 * max(1.0, horizon)]
        return keep, tr

    results = _run_members(members, run, threads)
    states, member, tstars = [], [], []
    for i, (keep, tr) in enumerate(results):
        states.extend(keep)
        member.extend([i] * len(keep))
        if c1 is not None:
            _, ts = enstrophy_ball_audit(Series.from_trajectory(tr), dp, AuditConfig(c1=c1))
            tstars.append(float("nan") if ts is None else ts - tr.times[0])
    if tstars:
        worst = max(tstars, key=lambda x: math.inf if math.isnan(x) else x)
        if math.isnan(worst) or burn_in < worst:
            log.warning("burn_in %.6g is below the empirical enstrophy entry time %.6g", burn_in, worst)
    return AttractorSample(
        states=states,
        params=dp,
        model=model,
        t_burn=float(burn_in),
        t_end=float(horizon),
        member=np.array(member, dtype=np.int64),
        meta={"dt": dt, "scheme": scheme, "cadence": cadence, "n_members": len(members), "t_star": tstars},
    )


def k_max(dp: DimensionlessParams) -> float:
    return 3.0 * math.pi ** 2 * dp.L / 16.0


def k_sweep(
    base: DimensionlessParams,
    Ks,
    members,
    *,
    c1: float,
    burn_in: float,
    window: float,
    cadence: float,
    dt: float,
    scheme: str = CNAB2,
    threads: int = 1,
    require_H: bool = True,
):
    """Distances from each K-sample to the K = 0 sample, same ensemble and window.

    Rows: dict(K, dist_X, dist_Z, n_samples, burn_in, window, refused).
    Entries violating K <= K_max or condition (H) are refused (distances nan).
    """
    Ks = [float(k) for k in Ks]
    if not Ks or Ks[-1] != 0.0 or any(k < 0 for k in Ks):
        raise AttractorError("K list must be nonnegative and end at 0")
    if any(a <= b for a, b in zip(Ks, Ks[1:])):
        raise AttractorError("K list must be strictly descending")
    members = list(members)
    samples = {}
    for K in [0.0] + [k for k in Ks if k != 0.0]:
        dp = base.replace(K=K)
        why = None
        if K > k_max(dp):
            why = f"K={K} exceeds K_max={k_max(dp):.6g}"
        elif require_H and not check_condition_H(dp, c1).satisfied:
            why = f"condition (H) fails at K={K}"
        if why:
            log.warning("k_sweep refuses entry: %s", why)
            samples[K] = why
            continue
        samples[K] = sample_omega_limit(
            members, dp, burn_in=burn_in, window=window, cadence=cadence, dt=dt, scheme=scheme, threads=threads, c1=c1
        )
    ref = samples[0.0]
    rows = []
    for K in Ks:
        smp = samples[K]
        if isinstance(smp, str) or isinstance(ref, str):
            rows.append(dict(K=K, dist_X=float("nan"), dist_Z=float("nan"), n_samples=0,
                             burn_in=burn_in, window=window, refused=smp if isinstance(smp, str) else ref))
            continue
        rows.append(
            dict(
                K=K,
                dist_X=hausdorff_semidist(smp, ref, "X").value,
                dist_Z=hausdorff_semidist(smp, ref, "Z").value,
                n_samples=len(smp),
                burn_in=burn_in,
                window=window,
                refused="",
            )
        )
    return rows, samples


def gamma_on_A0_audit(sample: AttractorSample, tolerance: float | None = None):
    """max ||gamma|| over a K = 0 sample; (value, passed)."""
    if sample.K != 0.0:
        raise AttractorError("gamma audit needs a K = 0 sample")
    vmax = max(s.gamma.l2() for s in sample.states)
    if tolerance is None:
        return vmax, None
    return vmax, bool(vmax <= tolerance)


def newtonian_projection_compare(
    dp: DimensionlessParams,
    members,
    *,
    horizon: float,
    dt: float,
    dt_newton: float | None = None,
    scheme: str = CNAB2,
):
    """Max over members and steps of ||u_c - u_n|| + ||theta_c - theta_n||.

    The coupled run uses the micropolar model at K = 0 with the member's
    gamma0; the Newtonian run starts from the same (u0, theta0) with
    gamma0 = 0.  With ``dt_newton`` the Newtonian run uses its own step and
    the comparison is made at the coupled run's recorded times common to both.
    """
    if dp.K != 0.0:
        raise AttractorError("Newtonian comparison needs K = 0")
    worst = 0.0
    per_step = []
    for s0 in members:
        zero_g = Field.zeros(s0.gamma.basis)
        tc = integrate(s0, horizon, dp, dt=dt, scheme=scheme, model=MICROPOLAR)
        tn = integrate(s0.with_(gamma=zero_g), horizon, dp, dt=dt_newton or dt, scheme=scheme, model=NEWTONIAN)
        nt = {round(t, 12): s for t, s in zip(tn.state_times, tn.states)}
        for t, sc in zip(tc.state_times, tc.states):
            sn = nt.get(round(t, 12))
            if sn is None:
                continue
            d = (sc.u - sn.u).l2() + (sc.theta - sn.theta).l2()
            per_step.append(d)
            worst = max(worst, d)
    return worst, np.array(per_step)


@dataclass(frozen=True)
class GrowthRecord:
    times: np.ndarray
    d: np.ndarray
    exponent: float  # least-squares rate in d ~ d0 exp(E t)
    envelope: float  # smallest E with d(t) <= d(0) exp(E t) on the record
    fit_residual: float  # rms of the log-linear fit
    passed: bool


def continuous_dependence_probe(
    s0: State,
    delta: float,
    horizon: float,
    dp: DimensionlessParams,
    *,
    dt: float,
    seed: int = 0,
    scheme: str = CNAB2,
    model: str = MICROPOLAR,
    n_active: int = 16,
    residual_threshold: float = 0.5,
) -> GrowthRecord:
    """Growth of the Z-distance between s0 and a perturbation of Z-size delta."""
    rng = np.random.default_rng(seed)
    pert = []
    for f in (s0.u, s0.gamma, s0.theta):
        a = np.zeros(f.basis.n)
        na = min(n_active, f.basis.n)
        a[:na] = rng.standard_normal(na)
        pert.append(a)
    s1 = State(s0.t, Field(s0.u.basis, s0.u.coef + pert[0]), Field(s0.gamma.basis, s0.gamma.coef + pert[1]),
               Field(s0.theta.basis, s0.theta.coef + pert[2]))
    d1 = state_distance(s0, s1, dp.M, "Z")
    if d1 > 0:
        scale = delta / d1
        s1 = State(s0.t, *[Field(f.basis, f.coef + scale * p) for f, p in zip((s0.u, s0.gamma, s0.theta), pert)])
    system = GalerkinSystem(s0.bases, dp, model)
    ta = integrate(s0, horizon, dp, dt=dt, scheme=scheme, model=model, system=system)
    tb = integrate(s1, horizon, dp, dt=dt, scheme=scheme, model=model, system=system)
    t = ta.state_times - s0.t
    d = np.array([state_distance(a, b, dp.M, "Z") for a, b in zip(ta.states, tb.states)])
    if delta == 0 or d[0] == 0:
        return GrowthRecord(t, d, 0.0, 0.0, 0.0, bool(np.all(d == 0)))
    y = np.log(d / d[0])
    E, c = np.polyfit(t, y, 1)
    res = float(np.sqrt(np.mean((y - (E * t + c)) ** 2)))
    env = float(np.max(y[1:] / t[1:])) if len(t) > 1 else 0.0
    return GrowthRecord(t, d, float(E), env, res, bool(res < residual_threshold and np.all(np.isfinite(d))))

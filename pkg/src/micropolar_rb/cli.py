"""Command-line entry point.

    micropolar-rb [global flags] <command> [overrides]

Commands: basis, simulate, audit, attractor, sweep-k, calibrate.  Settings
come from defaults, then the ``--config`` file (``key = value`` lines), then
``--set KEY=VALUE``, then the explicit ``--key value`` flags.  Every command
writes ``resolved-config.txt`` next to its outputs.

Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__, _kernels
from . import io as rio
from .attractor import (
    AttractorError,
    EnsembleSpec,
    gamma_on_A0_audit,
    k_sweep,
    make_ensemble,
    sample_omega_limit,
)
from .audit import (
    DEFAULT_C1,
    DEFAULT_TOLERANCES,
    AuditConfig,
    Series,
    calibrate_agmon_c1,
    run_audits,
)
from .basis import (
    BasisConfigError,
    BasisConstructionError,
    DomainSpec,
    build_all,
    cache_path,
    gram_deviation,
    poincare_audit,
    stokes_validity,
)
from .fields import FieldError
from .integrator import (
    MICROPOLAR,
    NEWTONIAN,
    SCHEMES,
    CNAB2,
    GalerkinSystem,
    IntegratorError,
    NumericalBlowup,
    StiffnessError,
    integrate,
)
from .params import DIMENSIONLESS_KEYS, PHYSICAL_KEYS, ParameterError, params_from_mapping, read_keyvalue_file
from .scenarios import INITIAL_KINDS, initial_state

log = logging.getLogger("micropolar_rb")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
LAMBDA1_TOL = 1e-8
DEFAULT_PARAMS = {"Ra": "100", "Pr": "10"}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


class OutputError(OSError):
    pass


def _floats(s):
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def _opt_int(s):
    s = str(s).strip().lower()
    return None if s in ("", "none", "all") else int(s)


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (converter, default, help)
RUN_KEYS = {
    "Mv": (int, "32", "vertical polynomial resolution"),
    "Nh": (int, "4", "horizontal wavenumber bound |m|, |n| <= Nh"),
    "Nz": (_opt_int, "none", "vertical modes per family and wavevector (default Mv // 4)"),
    "nmodes_stokes": (_opt_int, "none", "truncate the Stokes basis"),
    "nmodes_vector": (_opt_int, "none", "truncate the vector basis"),
    "nmodes_scalar": (_opt_int, "none", "truncate the scalar basis"),
    "model": (str, MICROPOLAR, "micropolar | newtonian"),
    "scheme": (str, CNAB2, " | ".join(SCHEMES)),
    "dt": (float, "1e-3", "time step"),
    "horizon": (float, "1.0", "integration horizon"),
    "diag_every": (int, "1", "time-series row every N steps"),
    "log_every": (int, "1000", "progress log line every N steps"),
    "init": (str, "perturbed", " | ".join(INITIAL_KINDS) + " | path to a checkpoint"),
    "init_amplitude": (float, "1e-2", "amplitude of the perturbed initial theta"),
    "init_peak": (float, "1.5", "peak temperature of the blob initial condition"),
    "radii": (_floats, "0.3,0.3,0.3", "L2 radii of (u, gamma, theta) for random initial data"),
    "members": (int, "2", "ensemble size"),
    "n_active": (int, "16", "lowest modes excited in random initial data"),
    "burn_in": (float, "2.0", "attractor burn-in time"),
    "window": (float, "0.5", "attractor sampling window"),
    "cadence": (float, "0.05", "attractor sampling cadence"),
    "Ks": (_floats, "0", "descending K list ending at 0"),
    "require_H": (_bool, "true", "refuse sweep entries violating condition (H)"),
    "c1": (float, repr(DEFAULT_C1), "Agmon constant"),
    "calib_samples": (int, "200", "random fields for the c1 calibration"),
    "poincare_samples": (int, "100", "random fields for the Poincare audit"),
    "input": (str, "", "time-series CSV to audit instead of simulating"),
    "cache_dir": (str, "", "basis cache directory (default OUT/cache)"),
    **{f"tol_{k}": (float, repr(v), f"audit tolerance for {k}") for k, v in DEFAULT_TOLERANCES.items()},
}
PARAM_KEYS = tuple(DIMENSIONLESS_KEYS) + tuple(k for k in PHYSICAL_KEYS if k not in DIMENSIONLESS_KEYS)


@dataclass
class RunConfig:
    domain: DomainSpec
    params: object
    values: dict  # converted run keys
    param_source: dict  # raw parameter block as given
    out: Path
    seed: int
    threads: int

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def cache_dir(self) -> Path:
        return Path(self.values["cache_dir"]) if self.values["cache_dir"] else self.out / "cache"

    def audit_config(self) -> AuditConfig:
        tol = {k: self.values[f"tol_{k}"] for k in DEFAULT_TOLERANCES}
        return AuditConfig(c1=self.values["c1"], tolerances=tol)

    def resolved(self) -> dict:
        d = {k: v for k, v in self.values.items()}
        for k, v in self.domain.as_dict().items():
            d[f"domain.{k}"] = "none" if v is None else (",".join("all" if x is None else str(x) for x in v) if isinstance(v, list) else v)
        for k in DIMENSIONLESS_KEYS + ("Gr", "eps", "A", "D"):
            d[f"params.{k}"] = float(getattr(self.params, k))
        for k, v in self.param_source.items():
            d[f"given.{k}"] = v
        d["seed"] = self.seed
        d["threads"] = self.threads
        d["backend"] = _kernels.backend()
        d["version"] = __version__
        return d


def resolve_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            raw.update(read_keyvalue_file(args.config))
        except OSError as exc:
            raise OutputError(f"cannot read config {args.config}: {exc}") from exc
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        raw[k] = v
    for k in list(RUN_KEYS) + list(DIMENSIONLESS_KEYS):
        v = getattr(args, "opt_" + k, None)
        if v is not None:
            raw[k] = v
    unknown = sorted(k for k in raw if k not in RUN_KEYS and k not in PARAM_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")

    values = {}
    for k, (conv, default, _) in RUN_KEYS.items():
        s = raw.get(k, default)
        try:
            values[k] = conv(s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {s!r} ({exc})") from exc
    given = {k: raw[k] for k in PARAM_KEYS if k in raw}
    block = dict(given)
    if not any(k in PHYSICAL_KEYS and k not in DIMENSIONLESS_KEYS for k in block):
        for k, v in DEFAULT_PARAMS.items():
            block.setdefault(k, v)
    dp = params_from_mapping(block)

    if values["model"] not in (MICROPOLAR, NEWTONIAN):
        raise ConfigError(f"model must be {MICROPOLAR} or {NEWTONIAN}")
    if values["scheme"] not in SCHEMES:
        raise ConfigError(f"scheme must be one of {sorted(SCHEMES)}")
    for k in ("dt", "horizon"):
        if not values[k] > 0:
            raise ConfigError(f"{k} must be > 0")
    for k in ("diag_every", "log_every", "members", "n_active", "calib_samples", "poincare_samples"):
        if values[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    if len(values["radii"]) != 3:
        raise ConfigError("radii needs three comma-separated values")
    domain = DomainSpec(
        ax=dp.ax, ay=dp.ay, Mv=values["Mv"], Nh=values["Nh"], Nz=values["Nz"],
        Nmodes=(values["nmodes_stokes"], values["nmodes_vector"], values["nmodes_scalar"]),
    )
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return RunConfig(domain, dp, values, given, Path(args.out), int(args.seed), int(args.threads))


# ---------------------------------------------------------------------------
# helpers


def _prepare_out(cfg: RunConfig):
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {cfg.out}: {exc}") from exc


def _write(fn, path, *a):
    try:
        return fn(path, *a)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _finish(cfg: RunConfig, extra=None):
    vals = cfg.resolved()
    vals.update(extra or {})
    _write(rio.write_resolved_config, cfg.out / "resolved-config.txt", vals)


def _bases(cfg: RunConfig):
    return build_all(cfg.domain, cfg.cache_dir)


def _initial(cfg: RunConfig, bases):
    kind = cfg.values["init"]
    if kind in INITIAL_KINDS:
        return initial_state(
            kind, bases, amplitude=cfg.init_amplitude, radii=cfg.radii, seed=cfg.seed,
            n_active=cfg.n_active, peak=cfg.init_peak,
        )
    try:
        header, arrays = rio.read_checkpoint(kind)
        s, _, _ = rio.state_from_checkpoint(header, arrays, bases)
    except (OSError, ValueError, KeyError) as exc:
        raise OutputError(f"cannot read initial checkpoint {kind}: {exc}") from exc
    return s


def _progress(every, horizon, t0):
    start = time.monotonic()

    def obs(i, s, ns):
        if i % every == 0:
            log.info("step %d  t=%.6g/%.6g  V=%.6g  (%.1fs)", i, s.t - t0, horizon, ns.V, time.monotonic() - start)

    return obs


def _simulate(cfg: RunConfig):
    bases = _bases(cfg)
    s0 = _initial(cfg, bases)
    dp = cfg.params
    system = GalerkinSystem(bases, dp, cfg.model)
    traj = integrate(
        s0, cfg.horizon, dp, dt=cfg.dt, scheme=cfg.scheme, model=cfg.model,
        sample_every=max(1, int(round(cfg.horizon / cfg.dt))), system=system,
        observers=(_progress(cfg.log_every, cfg.horizon, s0.t),),
    )
    rows = rio.timeseries_rows(traj, cfg.diag_every)
    _write(rio.write_timeseries, cfg.out / "timeseries.csv", rows)
    _write(rio.write_checkpoint, cfg.out / "final.ckpt", traj.final, dp, cfg.model)
    return traj


def _ensemble(cfg: RunConfig, bases):
    spec = EnsembleSpec(cfg.members, cfg.radii, cfg.seed, cfg.n_active)
    return make_ensemble(spec, bases)


# ---------------------------------------------------------------------------
# commands


def cmd_basis(cfg: RunConfig) -> int:
    t0 = time.monotonic()
    bases = _bases(cfg)
    lines = [f"# basis report  domain={cfg.domain.as_dict()}"]
    worst = 0.0
    for b in bases:
        lam1 = float(b.eigenvalues[0])
        dev = abs(lam1 - math.pi ** 2)
        worst = max(worst, dev)
        pr = poincare_audit(b, samples=cfg.poincare_samples, seed=cfg.seed)
        lines.append(
            f"{b.operator}: n={b.n} lambda1={lam1!r} lambda1_deviation={dev:.3e} "
            f"gram_deviation={gram_deviation(b):.3e} poincare_ok={pr.ok} "
            f"cache={cache_path(b.operator, cfg.domain, cfg.cache_dir)}"
        )
        if b.operator == "stokes":
            dv, wl = stokes_validity(b)
            lines.append(f"stokes: max_div_rel={dv:.3e} max_wall_rel={wl:.3e}")
    lines.append(f"elapsed_s={time.monotonic() - t0:.3f}")
    text = "\n".join(lines) + "\n"
    _write(Path.write_text, cfg.out / "basis_report.txt", text)
    print(text, end="")
    _finish(cfg)
    if not worst <= LAMBDA1_TOL:
        raise NumericalFailure(f"smallest eigenvalue deviates from pi^2 by {worst:.3e} > {LAMBDA1_TOL}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    traj = _simulate(cfg)
    fin = traj.norms[-1]
    print(f"t={traj.times[-1]:.6g} steps={len(traj.times) - 1} l2=({fin.l2_u:.6g}, {fin.l2_gamma:.6g}, {fin.l2_theta:.6g})")
    _finish(cfg, {"dt_effective": traj.dt})
    return EXIT_OK


def cmd_audit(cfg: RunConfig) -> int:
    if cfg.input:
        try:
            cols = rio.read_timeseries(cfg.input)
        except (OSError, ValueError, StopIteration) as exc:
            raise OutputError(f"cannot read {cfg.input}: {exc}") from exc
        series = Series.from_columns(cols)
    else:
        series = Series.from_trajectory(_simulate(cfg))
    report = run_audits(series, cfg.params, cfg.audit_config())
    _write(Path.write_text, cfg.out / "audit.csv", report.to_csv())
    _write(Path.write_text, cfg.out / "audit.txt", report.to_text())
    print(report.to_text(), end="")
    _finish(cfg)
    return EXIT_OK


def cmd_attractor(cfg: RunConfig) -> int:
    bases = _bases(cfg)
    members = _ensemble(cfg, bases)
    smp = sample_omega_limit(
        members, cfg.params, burn_in=cfg.burn_in, window=cfg.window, cadence=cfg.cadence, dt=cfg.dt,
        scheme=cfg.scheme, model=cfg.model, threads=cfg.threads, c1=cfg.c1,
    )
    _write(rio.write_sample, cfg.out / "attractor.smp", smp)
    extra = {"n_samples": len(smp)}
    msg = f"samples={len(smp)} t_burn={smp.t_burn:.6g} t_end={smp.t_end:.6g}"
    if smp.K == 0.0:
        g, _ = gamma_on_A0_audit(smp)
        extra["max_gamma_l2"] = g
        msg += f" max_gamma_l2={g:.6g}"
    print(msg)
    _finish(cfg, extra)
    return EXIT_OK


SWEEP_COLUMNS = ("K", "dist_X", "dist_Z", "n_samples", "burn_in", "window")


def cmd_sweep_k(cfg: RunConfig) -> int:
    bases = _bases(cfg)
    members = _ensemble(cfg, bases)
    if cfg.model != MICROPOLAR:
        raise ConfigError("sweep-k runs the micropolar model")
    rows, _ = k_sweep(
        cfg.params, cfg.Ks, members, c1=cfg.c1, burn_in=cfg.burn_in, window=cfg.window,
        cadence=cfg.cadence, dt=cfg.dt, scheme=cfg.scheme, threads=cfg.threads, require_H=cfg.require_H,
    )
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append(",".join([rio.fmt(r["K"]), rio.fmt(r["dist_X"]), rio.fmt(r["dist_Z"]), str(r["n_samples"]),
                               rio.fmt(r["burn_in"]), rio.fmt(r["window"])]))
        if r["refused"]:
            log.warning("K=%g refused: %s", r["K"], r["refused"])
    text = "\n".join(lines) + "\n"
    _write(Path.write_text, cfg.out / "sweep.csv", text)
    print(text, end="")
    _finish(cfg)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    bases = _bases(cfg)
    c1 = calibrate_agmon_c1(bases[0], samples=cfg.calib_samples, seed=cfg.seed)
    _write(Path.write_text, cfg.out / "c1.txt", f"c1 = {rio.fmt(c1)}\n")
    print(f"c1 = {rio.fmt(c1)}")
    _finish(cfg, {"c1_calibrated": c1})
    return EXIT_OK


COMMANDS = {
    "basis": cmd_basis,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "attractor": cmd_attractor,
    "sweep-k": cmd_sweep_k,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    g.add_argument("--threads", type=int, metavar="N", default=argparse.SUPPRESS)
    g.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    g.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)
    g.add_argument("--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS)
    g.add_argument("--backend", choices=("numba", "numpy"), default=argparse.SUPPRESS,
                   help="kernel implementation (default: numba when installed)")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="micropolar-rb", parents=[common], description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__.replace("cmd_", "").replace("_", "-"))
        o = sp.add_argument_group("overrides")
        for k in DIMENSIONLESS_KEYS:
            o.add_argument(f"--{k}", dest="opt_" + k, metavar="X")
        for k, (_, default, hlp) in RUN_KEYS.items():
            o.add_argument(f"--{k.replace('_', '-')}", dest="opt_" + k, metavar="V", help=f"{hlp} [{default}]")
    return p


def _defaults(ns):
    for k, v in (("config", None), ("threads", 1), ("seed", 0), ("out", "out"), ("set", None),
                 ("backend", None), ("verbose", 0)):
        if not hasattr(ns, k):
            setattr(ns, k, v)
    return ns


def main(argv=None) -> int:
    args = _defaults(build_parser().parse_args(argv))
    logging.basicConfig(
        level=logging.WARNING - 10 * min(2, args.verbose), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.backend:
            _kernels.set_backend(args.backend)
        cfg = resolve_config(args)
        _kernels.set_threads(cfg.threads)
        _prepare_out(cfg)
        return COMMANDS[args.command](cfg)
    except (NumericalBlowup, StiffnessError, BasisConstructionError, NumericalFailure, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterError, BasisConfigError, IntegratorError, AttractorError, FieldError, ValueError, RuntimeError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""File formats: checkpoints, time-series CSV, attractor samples, config sidecars.

Binary layouts are little endian.  Headers are JSON with sorted keys so
writing the same object twice gives the same bytes.

checkpoint:  b"MPRBCKP1", uint32 header length, header, then u, gamma, theta
             coefficients as float64 arrays (lengths in the header)
sample file: b"MPRBSMP1", uint32 header length, header, then for every state
             a uint64 byte count followed by one checkpoint
"""
from __future__ import annotations

import csv
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .basis import DomainSpec, cached_basis, STOKES, VECTOR, SCALAR
from .fields import Field, State
from .params import DimensionlessParams

__all__ = [
    "CHECKPOINT_VERSION",
    "TIMESERIES_COLUMNS",
    "checkpoint_bytes",
    "write_checkpoint",
    "read_checkpoint",
    "parse_checkpoint",
    "state_from_checkpoint",
    "timeseries_rows",
    "write_timeseries",
    "read_timeseries",
    "write_sample",
    "read_sample",
    "write_resolved_config",
    "fmt",
]

CHECKPOINT_VERSION = 1
_CKP = b"MPRBCKP1"
_SMP = b"MPRBSMP1"

TIMESERIES_COLUMNS = (
    "t", "l2_u", "l2_gamma", "l2_theta", "h1_u", "h1_gamma", "h1_theta",
    "V", "pos_part", "neg_part", "r_u", "r_gamma", "r_theta",
)


def fmt(x) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


def _params_dict(dp: DimensionlessParams):
    return {k: float(getattr(dp, k)) for k in ("Ra", "Pr", "K", "L", "M", "G", "ax", "ay")}


def _pack(magic, header: dict, payload: bytes) -> bytes:
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return magic + struct.pack("<I", len(hb)) + hb + payload


def _unpack(magic, raw: bytes, what: str):
    if raw[: len(magic)] != magic:
        raise ValueError(f"not a {what} file")
    (hl,) = struct.unpack("<I", raw[8:12])
    return json.loads(raw[12 : 12 + hl].decode()), 12 + hl


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(s: State, dp: DimensionlessParams, model: str) -> bytes:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "domain": s.u.basis.domain.as_dict(),
        "domains": [f.basis.domain.as_dict() for f in (s.u, s.gamma, s.theta)],
        "params": _params_dict(dp),
        "model": model,
        "t": float(s.t),
        "sizes": [s.u.basis.n, s.gamma.basis.n, s.theta.basis.n],
    }
    payload = b"".join(np.asarray(f.coef, dtype="<f8").tobytes() for f in (s.u, s.gamma, s.theta))
    return _pack(_CKP, header, payload)


def write_checkpoint(path, s: State, dp: DimensionlessParams, model: str) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(s, dp, model))
    return path


def parse_checkpoint(raw: bytes):
    """(header, [u, gamma, theta] coefficient arrays)."""
    header, off = _unpack(_CKP, raw, "checkpoint")
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    arrays = []
    for n in header["sizes"]:
        a = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(float)
        off += 8 * n
        arrays.append(a)
    if off != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return header, arrays


def read_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())


def state_from_checkpoint(header, arrays, bases=None, cache_dir=None):
    """Rebuild a State (plus params and model) from a parsed checkpoint."""
    if bases is None:
        doms = [DomainSpec.from_dict(d) for d in header["domains"]]
        bases = tuple(cached_basis(op, d, cache_dir) for op, d in zip((STOKES, VECTOR, SCALAR), doms))
    for b, a in zip(bases, arrays):
        if b.n != len(a):
            raise ValueError(f"checkpoint size {len(a)} does not match basis size {b.n}")
    s = State(header["t"], *[Field(b, a) for b, a in zip(bases, arrays)])
    return s, DimensionlessParams(**header["params"]), header["model"]


# ---------------------------------------------------------------------------
# time series


def timeseries_rows(traj, every: int = 1):
    """Rows of TIMESERIES_COLUMNS; residual columns hold the interval ending at each row."""
    res = traj.residuals
    rows = []
    n = len(traj.times)
    for i in range(n):
        if i % every and i != n - 1:
            continue
        ns = traj.norms[i]
        r = (0.0, 0.0, 0.0) if i == 0 else (res.r_u[i - 1], res.r_gamma[i - 1], res.r_theta[i - 1])
        rows.append([traj.times[i], *ns.as_row(), *r])
    return rows


def write_timeseries(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(TIMESERIES_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")
    return path


def read_timeseries(path) -> dict:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        missing = [c for c in TIMESERIES_COLUMNS if c not in head]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        data = [[float(x) for x in row] for row in rd if row]
    arr = np.array(data, dtype=float).reshape(-1, len(head))
    return {c: arr[:, i] for i, c in enumerate(head)}


# ---------------------------------------------------------------------------
# attractor samples


def write_sample(path, sample, metric: str = "X") -> Path:
    blobs = [checkpoint_bytes(s, sample.params, sample.model) for s in sample.states]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "params": _params_dict(sample.params),
        "model": sample.model,
        "metric": metric,
        "t_burn": sample.t_burn,
        "t_end": sample.t_end,
        "n_states": len(blobs),
        "member": [int(m) for m in sample.member],
    }
    payload = b"".join(struct.pack("<Q", len(b)) + b for b in blobs)
    path = Path(path)
    path.write_bytes(_pack(_SMP, header, payload))
    return path


def read_sample(path, bases=None, cache_dir=None):
    from .attractor import AttractorSample

    raw = Path(path).read_bytes()
    header, off = _unpack(_SMP, raw, "attractor sample")
    states = []
    for _ in range(header["n_states"]):
        (n,) = struct.unpack("<Q", raw[off : off + 8])
        off += 8
        h, arrays = parse_checkpoint(raw[off : off + n])
        off += n
        s, _, _ = state_from_checkpoint(h, arrays, bases, cache_dir)
        bases = s.bases
        states.append(s)
    dp = DimensionlessParams(**header["params"])
    smp = AttractorSample(
        states=states, params=dp, model=header["model"], t_burn=header["t_burn"], t_end=header["t_end"],
        member=np.array(header["member"], dtype=np.int64), meta={"metric": header["metric"]},
    )
    return smp


# ---------------------------------------------------------------------------


def write_resolved_config(path, values: dict) -> Path:
    """Every effective setting as ``key = value``, sorted, for provenance."""
    buf = _io.StringIO()
    for k in sorted(values):
        v = values[k]
        if v is None:
            v = "none"
        elif isinstance(v, float):
            v = fmt(v)
        elif isinstance(v, (list, tuple)):
            v = ",".join(fmt(x) if isinstance(x, float) else str(x) for x in v)
        buf.write(f"{k} = {v}\n")
    path = Path(path)
    path.write_text(buf.getvalue())
    return path

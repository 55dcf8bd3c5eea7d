"""CSV/JSON readers and writers with schema validation."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import ChoiceTrajectory, CountSeries
from .network import CostSequence

TRAJECTORY_COLUMNS = ("od_id", "commuter_id", "day", "choice")
COUNT_COLUMNS = ("od_id", "day", "route_id", "count")
COST_COLUMNS = ("od_id", "day", "route_id", "cost")
BAND_COLUMNS = ("day", "route_id", "mean", "lo50", "hi50", "lo95", "hi95")
EXTRAP_COLUMNS = ("day", "route_id", "mean", "lo", "hi", "truth")
METRIC_COLUMNS = ("N", "T", "param", "bias", "coverage", "width", "reps", "failures")


class SchemaError(ValueError):
    """Malformed input file; messages carry file line numbers."""


def _reader(path, columns):
    fh = open(path, newline="")
    rd = csv.reader(fh)
    try:
        header = next(rd)
    except StopIteration:
        fh.close()
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if tuple(header[: len(columns)]) != tuple(columns):
        fh.close()
        raise SchemaError(f"{path}: line 1: expected header {','.join(columns)}, got {','.join(header)}")
    return fh, rd, header


def _int(v, path, line, col):
    try:
        return int(v)
    except ValueError:
        raise SchemaError(f"{path}: line {line}: column {col} must be an integer, got {v!r}") from None


def _float(v, path, line, col):
    try:
        x = float(v)
    except ValueError:
        raise SchemaError(f"{path}: line {line}: column {col} must be numeric, got {v!r}") from None
    if not np.isfinite(x):
        raise SchemaError(f"{path}: line {line}: column {col} must be finite")
    return x


def _rows(path, columns):
    fh, rd, header = _reader(path, columns)
    with fh:
        for i, row in enumerate(rd, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {i}: expected {len(header)} fields, got {len(row)}")
            yield i, [c.strip() for c in row]


def _check_days(days: dict, path, what):
    """days: day -> first line.  Days must run 1..T without gaps."""
    ds = sorted(days)
    if not ds:
        raise SchemaError(f"{path}: no data rows")
    if ds[0] != 1:
        raise SchemaError(f"{path}: line {days[ds[0]]}: {what} days must start at 1")
    for a, b in zip(ds, ds[1:]):
        if b != a + 1:
            raise SchemaError(f"{path}: line {days[b]}: gap in day index ({a} -> {b})")
    return ds[-1]


# --- trajectories ------------------------------------------------------------------

def store_trajectory(traj: ChoiceTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for n in range(traj.N):
            for t in range(traj.T):
                w.writerow((traj.od_id, n + 1, t + 1, int(traj.choices[n, t])))


def load_trajectory(path, n_routes: Optional[int] = None) -> ChoiceTrajectory:
    """Read a single-OD trajectory file.  ``n_routes`` defaults to the
    largest route index present."""
    entries = {}
    od = None
    days = {}
    for line, (od_id, cid, day, choice) in _rows(path, TRAJECTORY_COLUMNS):
        if od is None:
            od = od_id
        elif od_id != od:
            raise SchemaError(f"{path}: line {line}: trajectory files hold one OD pair ({od} vs {od_id})")
        n, t, x = _int(cid, path, line, "commuter_id"), _int(day, path, line, "day"), _int(choice, path, line, "choice")
        if n < 1:
            raise SchemaError(f"{path}: line {line}: commuter_id must be >= 1")
        if x < 0 or (n_routes is not None and x > n_routes):
            raise SchemaError(f"{path}: line {line}: route id {x} outside 0..{n_routes if n_routes else 'M'}")
        if (n, t) in entries:
            raise SchemaError(f"{path}: line {line}: duplicate record for commuter {n}, day {t}")
        entries[(n, t)] = x
        days.setdefault(t, line)
    T = _check_days(days, path, "trajectory")
    ids = sorted({n for n, _ in entries})
    X = np.empty((len(ids), T), dtype=np.int64)
    for k, n in enumerate(ids):
        for t in range(1, T + 1):
            if (n, t) not in entries:
                raise SchemaError(f"{path}: commuter {n} has no record for day {t}")
            X[k, t - 1] = entries[(n, t)]
    M = n_routes if n_routes is not None else max(int(X.max()), 1)
    return ChoiceTrajectory(X, M, od)


# --- counts ----------------------------------------------------------------------

def store_counts(counts: CountSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COUNT_COLUMNS)
        for t in range(counts.T):
            for k in range(counts.counts.shape[1]):
                w.writerow((counts.od_id, t + 1, k, int(counts.counts[t, k])))


def load_counts(path, n_routes: Optional[int] = None, pad_to_n: Optional[int] = None) -> CountSeries:
    """Read a single-OD count file.

    Every day must list route ids 0..M, and (after optional padding of the
    non-travel column up to ``pad_to_n``) every day must sum to the same N.
    """
    cells = {}
    od = None
    days = {}
    for line, (od_id, day, route, count) in _rows(path, COUNT_COLUMNS):
        if od is None:
            od = od_id
        elif od_id != od:
            raise SchemaError(f"{path}: line {line}: count files hold one OD pair ({od} vs {od_id})")
        t, k, c = _int(day, path, line, "day"), _int(route, path, line, "route_id"), _int(count, path, line, "count")
        if k < 0 or (n_routes is not None and k > n_routes):
            raise SchemaError(f"{path}: line {line}: route id {k} outside 0..{n_routes if n_routes else 'M'}")
        if c < 0:
            raise SchemaError(f"{path}: line {line}: negative count")
        if (t, k) in cells:
            raise SchemaError(f"{path}: line {line}: duplicate count for day {t}, route {k}")
        cells[(t, k)] = (c, line)
        days.setdefault(t, line)
    T = _check_days(days, path, "count")
    M = n_routes if n_routes is not None else max(k for _, k in cells)
    C = np.zeros((T, M + 1), dtype=np.int64)
    for t in range(1, T + 1):
        for k in range(M + 1):
            if (t, k) not in cells:
                raise SchemaError(f"{path}: line {days[t]}: day {t} has no count for route {k}")
            C[t - 1, k] = cells[(t, k)][0]
    if pad_to_n is not None:
        C = pad_counts(C, pad_to_n)
    sums = C.sum(axis=1)
    N = int(np.bincount(sums).argmax())  # the most common daily total
    bad = np.nonzero(sums != N)[0]
    if bad.size:
        t = int(bad[0]) + 1
        raise SchemaError(f"{path}: line {days[t]}: day {t} sums to {sums[t - 1]}, expected N={N} "
                          f"(consider --pad-to-n)")
    return CountSeries(C, od)


def pad_counts(counts, n: int) -> np.ndarray:
    """Add non-travel counts so that each day sums to ``n``."""
    C = np.array(counts, dtype=np.int64)
    over = np.nonzero(C.sum(axis=1) > n)[0]
    if over.size:
        t = int(over[0])
        raise SchemaError(f"day {t + 1} already has {C[t].sum()} > {n} commuters; cannot pad")
    C[:, 0] += n - C.sum(axis=1)
    return C


# --- costs ------------------------------------------------------------------------

def store_costs(costs, path) -> None:
    """Write one CostSequence or a list of them (multi-OD)."""
    seqs = [costs] if isinstance(costs, CostSequence) else list(costs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COST_COLUMNS)
        for c in seqs:
            for t in range(c.T):
                for m in range(c.M):
                    w.writerow((c.od_id, t + 1, m + 1, repr(float(c.costs[t, m]))))


def load_costs(path) -> dict:
    """Read a cost file into ``{od_id: CostSequence}`` (insertion ordered)."""
    per_od = {}
    for line, (od_id, day, route, cost) in _rows(path, COST_COLUMNS):
        t, m = _int(day, path, line, "day"), _int(route, path, line, "route_id")
        c = _float(cost, path, line, "cost")
        if m < 1:
            raise SchemaError(f"{path}: line {line}: cost route ids start at 1")
        if c < 0:
            raise SchemaError(f"{path}: line {line}: negative cost")
        d = per_od.setdefault(od_id, {"cells": {}, "days": {}})
        if (t, m) in d["cells"]:
            raise SchemaError(f"{path}: line {line}: duplicate cost for OD {od_id}, day {t}, route {m}")
        d["cells"][(t, m)] = c
        d["days"].setdefault(t, line)
    if not per_od:
        raise SchemaError(f"{path}: no data rows")
    out = {}
    for od_id, d in per_od.items():
        T = _check_days(d["days"], path, f"OD {od_id} cost")
        M = max(m for _, m in d["cells"])
        arr = np.empty((T, M))
        for t in range(1, T + 1):
            for m in range(1, M + 1):
                if (t, m) not in d["cells"]:
                    raise SchemaError(f"{path}: line {d['days'][t]}: OD {od_id} day {t} lacks route {m}")
                arr[t - 1, m - 1] = d["cells"][(t, m)]
        out[od_id] = CostSequence(arr, od_id)
    return out


# --- draws -----------------------------------------------------------------------

def store_draws(draws, path) -> None:
    per_chain = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "draw", "divergent", *draws.names])
        for i in range(draws.samples.shape[0]):
            c = int(draws.chain_id[i])
            k = per_chain.get(c, 0) + 1
            per_chain[c] = k
            w.writerow([c + 1, k, int(bool(draws.divergent[i])), *(repr(float(x)) for x in draws.samples[i])])


def load_draws(path):
    """Read a draws CSV back into a PosteriorDraws (constrained columns only)."""
    from .sampler import PosteriorDraws

    fh, rd, header = _reader(path, ("chain", "draw", "divergent"))
    fh.close()
    names = header[3:]
    if not names:
        raise SchemaError(f"{path}: line 1: no parameter columns")
    if len(set(names)) != len(names):
        raise SchemaError(f"{path}: line 1: duplicate parameter columns")
    chains, div, rows = [], [], []
    expect = {}
    for line, row in _rows(path, ("chain", "draw", "divergent")):
        c = _int(row[0], path, line, "chain")
        k = _int(row[1], path, line, "draw")
        if c < 1:
            raise SchemaError(f"{path}: line {line}: chain ids start at 1")
        if k != expect.get(c, 0) + 1:
            raise SchemaError(f"{path}: line {line}: chain {c} draw index {k} out of sequence")
        expect[c] = k
        d = _int(row[2], path, line, "divergent")
        if d not in (0, 1):
            raise SchemaError(f"{path}: line {line}: divergent must be 0 or 1")
        chains.append(c - 1)
        div.append(bool(d))
        rows.append([_float(v, path, line, n) for v, n in zip(row[3:], names)])
    if not rows:
        raise SchemaError(f"{path}: no draws")
    ids = sorted(expect)
    if ids != list(range(1, len(ids) + 1)):
        raise SchemaError(f"{path}: chain ids must be 1..C without gaps")
    if len(set(expect.values())) != 1:
        raise SchemaError(f"{path}: chains have unequal draw counts")
    chain_id = np.asarray(chains)
    order = np.argsort(chain_id, kind="stable")
    X = np.asarray(rows)[order]
    return PosteriorDraws(
        samples=X,
        unconstrained_samples=np.empty((X.shape[0], 0)),
        chain_id=chain_id[order],
        divergent=np.asarray(div)[order],
        step_size=np.full(len(ids), np.nan),
        inv_mass=np.empty((len(ids), 0)),
        names=names,
    )


# --- tables and JSON ------------------------------------------------------------

def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in (r if not isinstance(r, dict) else [r[c] for c in columns])])


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if np.isfinite(x) else ("nan" if np.isnan(x) else repr(x))
    return x


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        x = float(o)
        return x if np.isfinite(x) else None
    return o


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, argv, config: dict, seed, outputs, started: Optional[str] = None,
                   extra: Optional[dict] = None) -> Path:
    """Run manifest listing every output (all must exist) plus provenance."""
    import numba
    import numpy
    import scipy

    from . import __version__

    out_dir = Path(out_dir)
    missing = [str(p) for p in outputs if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"outputs missing at exit: {missing}")
    path = out_dir / "manifest.json"
    doc = {
        "command": list(argv),
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": sorted(Path(p).name for p in outputs),
        "versions": {
            "d2dbayes": __version__,
            "python": sys.version.split()[0],
            "platform": platform.platform(),
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
    }
    if extra:
        doc.update(extra)
    write_json(path, doc)
    return path

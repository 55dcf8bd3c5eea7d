"""Command-line entry point.

Exit codes: 0 success, 1 convergence check failed under ``--strict``,
2 invalid input, 3 file-system failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .dynamics import (
    SmithParams,
    anonymize,
    simulate_background,
    simulate_hierarchical,
    simulate_horowitz,
    simulate_pooled,
    simulate_smith,
)
from .experiments import (
    SCENARIOS,
    RecoveryConfig,
    run_anonymized_comparison,
    run_hier_recovery,
    run_misspecification,
    run_pooled_recovery,
)
from .inference import (
    extrapolate,
    half_life_rope,
    logit_contrast,
    posterior_predictive,
    rope_test,
    summarize,
)
from .model import COUNTS_CAVEAT, DataBlock, PosteriorModel, PriorSpec
from .network import CostSequence, build_nd_network, load_network
from .params import HyperParams, PooledParams
from .sampler import SamplerConfig, SamplerError, diagnose, sample_posterior

log = logging.getLogger("d2dbayes")

EXIT_OK, EXIT_STRICT, EXIT_INPUT, EXIT_IO = 0, 1, 2, 3
RHAT_WARN = 1.05

DEFAULTS = {
    "pooled": {"eta": 0.3, "theta": 0.8, "rho": 0.15},
    "hyper": {"mu_eta": -1.5, "sigma_eta": 0.5, "mu_theta": 0.0, "sigma_theta": 0.5, "mu_rho": -2.0, "sigma_rho": 1.0},
    "smith": {"tau": 0.1, "epsilon": 0.05},
    "background": {"noise_sd": 1.0, "eta": 0.3, "theta": 0.3, "warmup": 20},
}


class InputError(ValueError):
    pass


# --- helpers ----------------------------------------------------------------------

def _config(args) -> dict:
    if args.config is None:
        return {}
    try:
        cfg = io.read_json(args.config)
    except FileNotFoundError:
        raise InputError(f"config file not found: {args.config}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def _section(cfg, name):
    d = dict(DEFAULTS.get(name, {}))
    d.update(cfg.get(name, {}))
    return d


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _priors(cfg) -> PriorSpec:
    return PriorSpec.from_dict(cfg["priors"]) if "priors" in cfg else PriorSpec()


def _sampler(cfg, seed) -> SamplerConfig:
    return SamplerConfig(**{**cfg.get("sampler", {}), "seed": seed})


def _network(cfg):
    return load_network(cfg["network"]) if "network" in cfg else build_nd_network()


def _single_costs(path) -> CostSequence:
    seqs = io.load_costs(path)
    if len(seqs) != 1:
        raise InputError(f"{path}: expected one OD pair, found {len(seqs)}")
    return next(iter(seqs.values()))


def _freeflow(cfg, od_id, M):
    if "v1" in cfg:
        v = cfg["v1"]
        v = v.get(od_id) if isinstance(v, dict) else v
        if v is None or len(v) != M:
            raise InputError(f"config v1 for OD {od_id} must list {M} values")
        return np.asarray(v, dtype=float)
    net = _network(cfg)
    try:
        od = net.od(od_id)
    except KeyError:
        raise InputError(f"no free-flow times for OD {od_id}; supply v1 in the config") from None
    fft = {lk.id: lk.fft for lk in net.links}
    return np.array([sum(fft[i] for i in path) for path in od.paths])


def _started():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- simulate ----------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    started = _started()
    out = _out(args)
    if args.env == "file-costs":
        if args.costs is None:
            raise InputError("--env file-costs needs --costs")
        costs = _single_costs(args.costs)
        if args.t is not None:
            if args.t > costs.T:
                raise InputError(f"cost file covers {costs.T} days, {args.t} requested")
            costs = costs.window(0, args.t)
    else:
        if args.t is None:
            raise InputError("--t is required with --env nd-background")
        bg = _section(cfg, "background")
        costs = simulate_background(_network(cfg), args.t + int(bg["warmup"]), noise_sd=bg["noise_sd"],
                                    eta=bg["eta"], theta=bg["theta"], rng_seed=[args.seed, 1],
                                    warmup=int(bg["warmup"]))
    if args.n is None or args.n < 1:
        raise InputError("--n must be a positive integer")
    v1 = np.asarray(cfg.get("v1", np.zeros(costs.M)), dtype=float)
    seed = [args.seed, 2]
    truth = {"model": args.model}
    if args.model == "pooled":
        p = _section(cfg, "pooled")
        params = PooledParams(p["eta"], p["theta"], p["rho"])
        traj = simulate_pooled(params, v1, costs, args.n, seed)
        truth.update(p)
    elif args.model == "horowitz":
        p = _section(cfg, "pooled")
        traj = simulate_horowitz(p["eta"], p["theta"], v1, costs, args.n, seed)
        truth.update({"eta": p["eta"], "theta": p["theta"], "rho": 0.0})
    elif args.model == "hier":
        h = _section(cfg, "hyper")
        hyper = HyperParams(**h)
        ind, traj = simulate_hierarchical(hyper, args.n, v1, costs, seed)
        truth.update(h)
        truth["individual"] = {"eta": ind.eta, "theta": ind.theta, "rho": ind.rho}
    else:
        s = _section(cfg, "smith")
        traj = simulate_smith(SmithParams(s["tau"], s["epsilon"]), costs, args.n, seed)
        truth.update(s)
    truth["v1"] = v1
    files = [out / "trajectory.csv", out / "costs.csv", out / "truth.json"]
    io.store_trajectory(traj, files[0])
    io.store_costs(costs, files[1])
    io.write_json(files[2], truth)
    if args.anonymize:
        files.append(out / "counts.csv")
        io.store_counts(anonymize(traj), files[-1])
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    return EXIT_OK


# --- fit --------------------------------------------------------------------------

def cmd_fit(args, cfg) -> int:
    started = _started()
    cost_map = io.load_costs(args.costs)
    blocks = []
    for path in args.data:
        if args.obs == "complete":
            if args.pad_to_n is not None:
                raise InputError("--pad-to-n applies to count data only")
            obs = io.load_trajectory(path)
        else:
            obs = io.load_counts(path, pad_to_n=args.pad_to_n)
        if obs.od_id not in cost_map:
            raise InputError(f"{path}: OD {obs.od_id} has no costs in {args.costs}")
        costs = cost_map[obs.od_id]
        if args.obs == "complete" and obs.n_routes != costs.M:
            if obs.n_routes > costs.M:
                raise InputError(f"{path}: route ids exceed the {costs.M} routes in the cost file")
            obs = type(obs)(obs.choices, costs.M, obs.od_id)
        if obs.n_routes != costs.M:
            raise InputError(f"{path}: {obs.n_routes} routes but costs list {costs.M}")
        if obs.T > costs.T:
            raise InputError(f"{path}: data covers {obs.T} days, costs only {costs.T}")
        costs = costs.window(0, obs.T)
        v1 = _freeflow(cfg, obs.od_id, costs.M) if args.init_values == "freeflow" else None
        blocks.append(DataBlock(obs, costs, v1))
    regime = f"{args.model}-{args.obs}"
    model = PosteriorModel(blocks, regime, _priors(cfg), init_values=args.init_values,
                           parameterization=cfg.get("parameterization", "noncentered"))
    draws = sample_posterior(model, _sampler(cfg, args.seed))
    out = _out(args)
    diag = diagnose(draws)
    summary = {"parameters": summarize(draws, cfg.get("alpha", 0.95), diag), "metadata": model.metadata}
    summary["metadata"]["priors"] = model.priors.to_dict()
    summary["metadata"]["divergences"] = diag.divergence_count
    if regime == "hier-counts":
        print(f"note: {COUNTS_CAVEAT}", file=sys.stderr)
    files = [out / "draws.csv", out / "diagnostics.json", out / "summary.json"]
    io.store_draws(draws, files[0])
    io.write_json(files[1], diag.to_dict())
    io.write_json(files[2], summary)
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    worst = diag.max_rhat()
    if worst > RHAT_WARN:
        msg = f"max split R-hat {worst:.3f} exceeds {RHAT_WARN}"
        warnings.warn(msg)
        print(f"warning: {msg}", file=sys.stderr)
        if args.strict:
            return EXIT_STRICT
    return EXIT_OK


# --- predict ------------------------------------------------------------------------

def cmd_predict(args, cfg) -> int:
    started = _started()
    draws = io.load_draws(args.draws)
    costs = _single_costs(args.costs)
    K = costs.T if args.train_days is None else args.train_days
    if not 1 <= K <= costs.T:
        raise InputError(f"--train-days must lie in 1..{costs.T}")
    if args.n is None or args.n < 1:
        raise InputError("--n must be a positive integer")
    v1 = cfg.get("v1")
    out = _out(args)
    train = costs.window(0, K)
    pp = posterior_predictive(draws, train, args.n, int(cfg.get("replications", 500)), [args.seed, 3],
                              max_draws=int(cfg.get("max_draws", 200)), v1=v1)
    files = [out / "predictive.csv"]
    io.write_rows(files[0], io.BAND_COLUMNS, pp.rows())
    files.append(out / "extrapolation.csv")
    if K < costs.T:
        ex = extrapolate(draws, costs.window(K, costs.T), args.n, costs_history=train, v1=v1)
        io.write_rows(files[1], io.EXTRAP_COLUMNS, ex.rows())
    else:
        # no future days: probabilities over the fitted window itself
        ex = extrapolate(draws, train, args.n, v1=v1)
        io.write_rows(files[1], io.EXTRAP_COLUMNS, ex.rows())
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    return EXIT_OK


# --- compare / diagnose --------------------------------------------------------------

def cmd_compare(args, cfg) -> int:
    started = _started()
    a = io.load_draws(args.draws_a)
    if args.param not in a.names:
        raise InputError(f"{args.draws_a}: no column {args.param!r}")
    if "rope_half_life" in cfg:
        rope = half_life_rope(float(cfg["rope_half_life"]))
    else:
        rope = tuple(cfg.get("rope", (-0.1, 0.1)))
    if args.draws_b is None:
        x, paired = a.column(args.param), None
    else:
        b = io.load_draws(args.draws_b)
        if args.param not in b.names:
            raise InputError(f"{args.draws_b}: no column {args.param!r}")
        xa, xb = a.column(args.param), b.column(args.param)
        x = logit_contrast(xa, xb, seed=args.seed)
        paired = xa.size == xb.size
    res = rope_test(x, rope, paired=paired)
    out = _out(args)
    doc = res.to_dict()
    doc.update({"param": args.param, "contrast": "logit difference" if args.draws_b else "parameter",
                "contrast_mean": float(np.mean(x))})
    files = [out / "rope.json"]
    io.write_json(files[0], doc)
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    return EXIT_OK


def cmd_diagnose(args, cfg) -> int:
    started = _started()
    draws = io.load_draws(args.draws)
    truth = None
    if args.truth is not None:
        tj = io.read_json(args.truth)
        missing = [n for n in draws.names if n not in tj]
        if missing:
            raise InputError(f"{args.truth}: no truth for {missing[:5]}")
        truth = [float(tj[n]) for n in draws.names]
    diag = diagnose(draws, truth)
    out = _out(args)
    files = [out / "diagnostics.json"]
    io.write_json(files[0], diag.to_dict())
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    worst = diag.max_rhat()
    if worst > RHAT_WARN:
        print(f"warning: max split R-hat {worst:.3f} exceeds {RHAT_WARN}", file=sys.stderr)
    if args.strict and worst > RHAT_WARN:
        return EXIT_STRICT
    return EXIT_OK


# --- experiment ---------------------------------------------------------------------

def cmd_experiment(args, cfg) -> int:
    started = _started()
    out = _out(args)
    rc = {k: v for k, v in cfg.items() if k in RecoveryConfig.__dataclass_fields__}
    rc["seed"] = args.seed
    files = []
    if args.kind == "anonymized":
        sampler = SamplerConfig(**cfg["sampler"]) if "sampler" in cfg else None
        res = run_anonymized_comparison(int(cfg.get("N", 50)), int(cfg.get("T", 50)), seed=args.seed, sampler=sampler,
                                        priors=_priors(cfg))
        files.append(out / "comparison.json")
        io.write_json(files[0], res.to_dict())
    else:
        if args.kind == "hier-recovery":
            rc.setdefault("regime", "hier-complete")
        config = RecoveryConfig.from_dict(rc)
        if args.kind == "pooled-recovery":
            rows = run_pooled_recovery(config).rows
        elif args.kind == "hier-recovery":
            rows = run_hier_recovery(config).rows
        else:
            if args.scenario is None:
                raise InputError("--scenario is required for misspecification runs")
            rows = run_misspecification(args.scenario, config).rows()
        files.append(out / "metrics.csv")
        io.write_rows(files[0], io.METRIC_COLUMNS, rows)
    files.append(io.write_manifest(out, sys.argv, cfg, args.seed, files, started))
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------

def _common(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=d(None), help="JSON file with numeric settings")
    g.add_argument("--seed", type=int, default=d(0), help="master random seed (default 0)")
    g.add_argument("--out", metavar="DIR", default=d("."), help="output directory (default .)")
    g.add_argument("--strict", action="store_true", default=d(False),
                   help="exit nonzero when convergence checks fail")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2dbayes", description=__doc__.splitlines()[0] if __doc__ else None,
                                     parents=[_common(True)])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common(False)

    p = sub.add_parser("simulate", parents=[common], help="simulate choice data")
    p.add_argument("--model", choices=("pooled", "hier", "horowitz", "smith"), required=True)
    p.add_argument("--env", choices=("nd-background", "file-costs"), default="nd-background",
                   help="cost source: Nguyen-Dupuis background dynamics or a cost CSV")
    p.add_argument("--costs", metavar="PATH", help="cost CSV for --env file-costs")
    p.add_argument("--n", type=int, help="number of commuters")
    p.add_argument("--t", type=int, help="number of days")
    p.add_argument("--anonymize", action="store_true", help="also write daily counts")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="sample the posterior")
    p.add_argument("--data", metavar="PATH", nargs="+", required=True,
                   help="trajectory or count CSV (one per OD pair)")
    p.add_argument("--costs", metavar="PATH", required=True, help="cost CSV covering every OD in --data")
    p.add_argument("--obs", choices=("complete", "counts"), required=True)
    p.add_argument("--model", choices=("pooled", "hier"), required=True)
    p.add_argument("--init-values", choices=("zeros", "freeflow", "delta"), default="zeros")
    p.add_argument("--pad-to-n", type=int, metavar="K", help="fill non-travel counts up to K per day")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="posterior predictive bands and extrapolation")
    p.add_argument("--draws", metavar="PATH", required=True)
    p.add_argument("--costs", metavar="PATH", required=True, help="costs for the fitted and future days")
    p.add_argument("--n", type=int, help="number of commuters")
    p.add_argument("--train-days", type=int, metavar="K", help="days used for fitting (default: all)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", parents=[common], help="ROPE test on a parameter or a logit contrast")
    p.add_argument("--draws-a", metavar="PATH", required=True)
    p.add_argument("--draws-b", metavar="PATH", help="second draws file; omit to test the parameter itself")
    p.add_argument("--param", default="eta")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", parents=[common], help="R-hat, ESS and divergences of a draws file")
    p.add_argument("--draws", metavar="PATH", required=True)
    p.add_argument("--truth", metavar="PATH", help="JSON of true values for rank statistics")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("experiment", parents=[common], help="run a simulation study")
    p.add_argument("--kind", choices=("pooled-recovery", "hier-recovery", "misspecification", "anonymized"),
                   required=True)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except (InputError, io.SchemaError, ValueError, TypeError, KeyError, SamplerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

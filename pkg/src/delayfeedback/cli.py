"""Command-line experiment runner.

Exit codes
----------
0  success / stable verdict
1  invalid configuration (message names the offending key)
2  certificate not stable (``|k| >= k0``) or iterative bound violated
3  simulation diverged

Summary JSON keys (``simulate``)
--------------------------------
model, k, tau, method, diverged, last_valid_time, rate_fit, M_fit,
fit_residual, fit_window, certificate, guaranteed_rate, rate_margin,
bound_report, energy_monotone_violations, labels.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import certificates as certs
from . import diagnostics as diag
from .experiments import (
    DEFAULT_PARAMS, SWEEP_COLUMNS, ConfigError, ExperimentConfig, alpha_for, build_system,
    certify_system, default_initial, rows_csv, simulate, solve, sweep, trajectory_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_DIVERGED = 0, 1, 2, 3

CERT_COLUMNS = ("regime", "M", "omega", "tau", "k", "k0", "sigma", "omega_prime", "stable",
                "Bnorm", "C1", "C2", "C3", "C4", "Mprime", "delta", "gamma_max", "Mtilde",
                "Mtilde_derivation", "alpha")


def _write(path, text):
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _json(obj):
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=2, sort_keys=True, default=default)


def _load_config(args):
    """Config file (if any) overlaid with command-line flags."""
    d = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ConfigError("config", "must be a JSON object")
    if getattr(args, "model", None):
        d["model"] = args.model
    params = dict(d.get("params", {}))
    for key in ("N", "a", "a_point", "alpha_damp", "beta", "tau"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    for item in getattr(args, "param", None) or []:
        if "=" not in item:
            raise ConfigError("param", f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        params[key] = json.loads(val)
    if params:
        d["params"] = params
    if getattr(args, "k", None) is not None:
        ks = args.k
        if len(ks) == 1:
            d["k"] = ks[0]
            d.pop("k_grid", None)
        else:
            d["k_grid"] = ks
    solver = dict(d.get("solver", {}))
    for key in ("T", "steps_per_delay", "integrator", "method", "n_rho"):
        val = getattr(args, key, None)
        if val is not None:
            solver[key] = val
    if solver:
        d["solver"] = solver
    output = dict(d.get("output", {}))
    for key, attr in (("csv", "csv"), ("summary", "summary")):
        val = getattr(args, attr, None)
        if val is not None:
            output[key] = val
    if getattr(args, "states", False):
        output["include_states"] = True
    if output:
        d["output"] = output
    if getattr(args, "workers", None) is not None:
        d["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def cmd_certify(args):
    direct = any(getattr(args, c) is not None for c in ("M", "omega", "Bnorm", "C1", "C2", "C3"))
    ks = args.k if args.k is not None else None
    if direct and not args.model and not args.config:
        for name in ("M", "omega", "tau"):
            if getattr(args, name) is None:
                raise ConfigError(name, "required when certifying from constants")
        if ks is None:
            raise ConfigError("k", "required when certifying from constants")
        records = []
        for k in ks:
            if args.C1 is not None or args.C2 is not None or args.C3 is not None:
                for name in ("C1", "C2", "C3"):
                    if getattr(args, name) is None:
                        raise ConfigError(name, "required for the unbounded regime")
                cert = certs.unbounded_certificate(args.M, args.omega, args.tau,
                                                   args.C1, args.C2, args.C3, k)
            else:
                if args.Bnorm is None:
                    raise ConfigError("Bnorm", "required for the bounded regime")
                cert = certs.bounded_certificate(args.M, args.omega, args.tau, args.Bnorm, k)
            records.append(cert.to_record())
    else:
        cfg = _load_config(args)
        constants = cfg.certificate
        if direct:
            constants = {c: getattr(args, c) for c in ("M", "omega", "Bnorm", "C1", "C2", "C3")
                         if getattr(args, c) is not None}
        grid = cfg.k_grid if cfg.k_grid is not None else [cfg.k]
        records = []
        semigroup = None
        for k in sorted(float(x) for x in grid):
            system = build_system(cfg.model, cfg.model_params(), k)
            if semigroup is None and constants == "estimate":
                semigroup = diag.estimate_semigroup_constants(system.A, gram=system.gram)
            cert = certify_system(system, constants, m=cfg.admissibility_m, semigroup=semigroup)
            rec = cert.to_record()
            rec["model"] = cfg.model
            records.append(rec)
    text = _json(records[0] if len(records) == 1 else records)
    print(text)
    _write(args.out, text + "\n")
    if args.csv:
        rows = [{c: r.get(c) for c in CERT_COLUMNS} for r in records]
        _write(args.csv, rows_csv(rows, CERT_COLUMNS))
    return EXIT_OK if all(r["stable"] for r in records) else EXIT_UNSTABLE


def cmd_simulate(args):
    cfg = _load_config(args)
    traj, summary = simulate(cfg)
    _write(cfg.output.csv, trajectory_csv(traj, cfg.output.include_states))
    text = _json(summary)
    _write(cfg.output.summary, text + "\n")
    if cfg.output.summary is None:
        print(text)
    if traj.diverged:
        print(f"diverged: last valid time {traj.last_valid_time!r}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    if cfg.k_grid is None:
        raise ConfigError("k_grid", "sweep needs a k grid")
    rows = sweep(cfg)
    text = rows_csv(rows, SWEEP_COLUMNS)
    if cfg.output.csv:
        _write(cfg.output.csv, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


REPORT_COLUMNS = ("t", "measured_norm", "envelope_value", "slack")


def cmd_verify_bounds(args):
    cfg = _load_config(args)
    system = build_system(cfg.model, cfg.model_params(), cfg.k)
    U0, history = default_initial(system, cfg.initial)
    traj = solve(system, U0, history, cfg.solver)
    cert = certify_system(system, cfg.certificate, m=cfg.admissibility_m)
    alpha = alpha_for(system, cert, history)
    report = diag.verify_iterative_bound(traj, cert, system.norm(U0), alpha, tol=args.tol)
    rows = [{"t": r.t, "measured_norm": r.measured_norm, "envelope_value": r.envelope_value,
             "slack": r.slack} for r in report.records]
    _write(cfg.output.csv, rows_csv(rows, REPORT_COLUMNS))
    summary = {"model": cfg.model, "k": cfg.k, "stable": cert.stable, "violated": report.violated,
               "violations": len(report.violations), "worst_slack": report.worst_slack,
               "tolerance": report.tolerance, "alpha": alpha}
    print(_json(summary))
    return EXIT_UNSTABLE if report.violated else EXIT_OK


def cmd_scan_reflection(args):
    grid = np.arange(args.xi_min, args.xi_max + 0.5 * args.step, args.step)
    sup, arg, min_den = diag.sup_scan(args.a, grid)
    if args.csv:
        rows = [{"xi": float(x), "abs_c": float(abs(diag.reflection_coefficient(x, args.a)))}
                for x in grid[::args.stride]]
        _write(args.csv, rows_csv(rows, ("xi", "abs_c")))
    print(_json({"a": args.a, "sup": sup, "argmax": arg, "min_denominator": min_den,
                 "points": int(grid.size)}))
    return EXIT_OK


def _common(p, with_k=True):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--model", choices=sorted(DEFAULT_PARAMS))
    p.add_argument("--N", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--a-point", dest="a_point", type=float)
    p.add_argument("--alpha-damp", dest="alpha_damp", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--param", action="append", help="extra model parameter key=JSON")
    if with_k:
        p.add_argument("--k", type=float, nargs="+")
    p.add_argument("--seed", type=int)


def _solver_flags(p):
    p.add_argument("--T", type=float)
    p.add_argument("--steps-per-delay", dest="steps_per_delay", type=int)
    p.add_argument("--integrator", choices=["rk4", "implicit-midpoint"])
    p.add_argument("--method", choices=["steps", "duhamel", "transport"])
    p.add_argument("--n-rho", dest="n_rho", type=int)
    p.add_argument("--csv")


def build_parser():
    parser = argparse.ArgumentParser(prog="delayfeedback",
                                     description="Delay-feedback stability experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="stability threshold and decay rate")
    _common(p)
    for name in ("M", "omega", "Bnorm", "C1", "C2", "C3"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--estimate", action="store_true", help="estimate constants from the model")
    p.add_argument("--out", help="also write the JSON record(s) here")
    p.add_argument("--csv", help="write records as CSV")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="solve, fit and verify one configuration")
    _common(p)
    _solver_flags(p)
    p.add_argument("--summary")
    p.add_argument("--states", action="store_true", help="include state columns in the CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="one summary row per gain")
    _common(p)
    _solver_flags(p)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-bounds", help="check the staircase envelope along a trajectory")
    _common(p)
    _solver_flags(p)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("scan-reflection", help="tabulate |c(xi)| and its supremum")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--xi-min", dest="xi_min", type=float, default=-200.0)
    p.add_argument("--xi-max", dest="xi_max", type=float, default=200.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--stride", type=int, default=100, help="CSV row thinning")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_scan_reflection)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

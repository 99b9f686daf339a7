"""Experiment configuration and the certify / simulate / sweep pipelines."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import certificates as certs
from . import diagnostics as diag
from .core import History
from .models import CATALOG, build_model, nodal_state
from .solver import SolverConfig, duhamel_oracle, solve_method_of_steps, solve_transport_augmented

UNBOUNDED_MODELS = ("wave-boundary-1d", "wave-interface-1d", "wave-damped-boundary-delay-1d")

DEFAULT_PARAMS = {
    "scalar": {"a": -1.0, "b": 1.0, "tau": math.log(2.0)},
    "linear-toy": {"spectrum": [-1.0, -2.0, -3.0, -4.0], "seed": 0, "Bnorm_target": 1.0, "tau": 1.0},
    "wave-internal-1d": {"N": 50, "a": 1.0, "tau": 1.0, "beta": 2.0,
                         "omega1": [0.0, 1.0], "omega2": [0.2, 0.8]},
    "wave-boundary-1d": {"N": 50, "a": 1.0, "tau": 1.0},
    "wave-interface-1d": {"N": 50, "a_point": 0.5, "tau": 1.0},
    "wave-damped-boundary-delay-1d": {"N": 50, "alpha_damp": 1.0, "tau": 1.0},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(where, "must be a mapping")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


@dataclass
class SolverSettings:
    steps_per_delay: int = 128
    T: float = 20.0
    integrator: str = "rk4"
    method: str = "steps"
    n_rho: int = 200
    record_every: int = 1
    blowup_guard: float = 1e12
    quad_points: int = 4

    METHODS = ("steps", "duhamel", "transport")


@dataclass
class InitialData:
    amplitude: float = 1.0
    U0: list | None = None
    history_value: list | None = None


@dataclass
class OutputSettings:
    csv: str | None = None
    summary: str | None = None
    include_states: bool = False


@dataclass
class ExperimentConfig:
    model: str = "scalar"
    params: dict = field(default_factory=dict)
    k: float = 0.0
    k_grid: list | None = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    certificate: dict | str = "estimate"
    initial: InitialData = field(default_factory=InitialData)
    fit_window: list | None = None
    admissibility_m: int = 1024
    output: OutputSettings = field(default_factory=OutputSettings)
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, d):
        top = {f.name for f in fields(cls)}
        _strict(d, top, "")
        d = dict(d)
        nested = {"solver": SolverSettings, "initial": InitialData, "output": OutputSettings}
        for key, sub in nested.items():
            if key in d:
                _strict(d[key], {f.name for f in fields(sub)}, key)
                d[key] = sub(**d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def validate(self):
        if self.model not in CATALOG:
            raise ConfigError("model", f"unknown model {self.model!r}")
        allowed = set(DEFAULT_PARAMS[self.model]) | {"viscosity", "dim"}
        for key in self.params:
            if key not in allowed:
                raise ConfigError(f"params.{key}", "unknown parameter for this model")
        if self.k_grid is not None and len(self.k_grid) == 0:
            raise ConfigError("k_grid", "must be nonempty")
        s = self.solver
        if s.method not in SolverSettings.METHODS:
            raise ConfigError("solver.method", f"must be one of {SolverSettings.METHODS}")
        if int(s.steps_per_delay) < 1:
            raise ConfigError("solver.steps_per_delay", "must be >= 1")
        if not s.T > 0:
            raise ConfigError("solver.T", "must be positive")
        if isinstance(self.certificate, str):
            if self.certificate != "estimate":
                raise ConfigError("certificate", "must be 'estimate' or a mapping of constants")
        else:
            _strict(self.certificate, {"M", "omega", "Bnorm", "C1", "C2", "C3"}, "certificate")
        if int(self.workers) < 1:
            raise ConfigError("workers", "must be >= 1")

    def model_params(self):
        p = dict(DEFAULT_PARAMS[self.model])
        p.update(self.params)
        return p


def build_system(name, params, k):
    params = dict(params)
    if name == "linear-toy":
        params.pop("dim", None)
    return build_model(name, k=k, **params)


def default_initial(system, initial=None):
    """Initial state and history used by the CLI when none are given.

    Wave models start from ``u = A sin(pi x)``, ``u_t = 0`` with a quiet
    history; toy systems from a constant state ``A / sqrt(n)`` whose
    history repeats it.
    """
    initial = initial or InitialData()
    amp = initial.amplitude
    m = 128
    if "x" in system.labels:
        U0 = nodal_state(system, lambda x: amp * np.sin(np.pi * x), lambda x: 0.0 * x)
        hist = History.constant(np.zeros(system.n_outputs), system.tau, m)
    else:
        U0 = np.full(system.dim, amp / math.sqrt(system.dim))
        hist = History.constant(system.output_map @ U0, system.tau, m)
    if initial.U0 is not None:
        U0 = np.asarray(initial.U0, dtype=float)
    if initial.history_value is not None:
        hist = History.constant(initial.history_value, system.tau, m)
    return U0, hist


def certify_system(system, constants="estimate", m=1024, semigroup=None):
    """Certificate for ``system.k``; constants are estimated unless given."""
    model = system.labels.get("model")
    unbounded = model in UNBOUNDED_MODELS
    given = constants if isinstance(constants, dict) else {}
    if "M" in given and "omega" in given:
        M, omega = float(given["M"]), float(given["omega"])
    else:
        if semigroup is None:
            semigroup = diag.estimate_semigroup_constants(system.A, gram=system.gram)
        M, omega = semigroup.M, semigroup.omega
    if unbounded or "C1" in given:
        if all(c in given for c in ("C1", "C2", "C3")):
            C1, C2, C3 = (float(given[c]) for c in ("C1", "C2", "C3"))
        else:
            adm = diag.estimate_admissibility(system, m=m)
            C1, C2, C3 = adm.C1, adm.C2, adm.C3
        return certs.unbounded_certificate(M, omega, system.tau, C1, C2, C3, system.k)
    Bnorm = float(given["Bnorm"]) if "Bnorm" in given else diag.feedback_norm(system)
    cert = certs.bounded_certificate(M, omega, system.tau, Bnorm, system.k)
    if not system.is_linear:
        cert = certs.with_tilde_M(cert)
    return cert


def solve(system, U0, history, settings):
    cfg = SolverConfig.from_tau(system.tau, int(settings.steps_per_delay), settings.T,
                                integrator=settings.integrator, blowup_guard=settings.blowup_guard,
                                record_every=int(settings.record_every))
    if settings.method == "steps":
        return solve_method_of_steps(system, U0, history, cfg)
    if settings.method == "duhamel":
        return duhamel_oracle(system, U0, history, settings.T, settings.quad_points,
                              dt=cfg.dt)
    return solve_transport_augmented(system, U0, history, cfg, int(settings.n_rho))


def alpha_for(system, cert, history):
    if cert.regime == "unbounded-linear":
        return certs.history_l2_norm(history, system.output_gram)
    return certs.history_weight_alpha(
        history, cert.omega, norm=lambda y: system.norm(system.feedback @ y))


def simulate(config, k=None):
    """Run one experiment; returns ``(trajectory, summary dict)``."""
    k = config.k if k is None else k
    system = build_system(config.model, config.model_params(), k)
    U0, history = default_initial(system, config.initial)
    traj = solve(system, U0, history, config.solver)
    if int(config.solver.record_every) == 1 or (
            int(config.solver.steps_per_delay) % int(config.solver.record_every) == 0):
        energies = diag.energy_series(system, traj, history)
        traj = traj.with_energies(energies)
    summary = {"model": config.model, "k": k, "tau": system.tau,
               "method": config.solver.method, "diverged": traj.diverged,
               "last_valid_time": traj.last_valid_time, "labels": _provenance(system)}
    end = traj.times[-1]
    window = tuple(config.fit_window) if config.fit_window else (0.5 * end, end)
    try:
        fit = diag.fit_decay_rate(traj, window=window)
        summary.update(rate_fit=fit.rate_fit, M_fit=fit.M_fit, fit_residual=fit.residual,
                       fit_window=list(fit.window))
    except ValueError as exc:
        summary.update(rate_fit=None, M_fit=None, fit_residual=None, fit_window=list(window),
                       fit_error=str(exc))
    try:
        cert = certify_system(system, config.certificate, m=config.admissibility_m)
    except diag.NotExponentiallyStableError as exc:
        cert = None
        summary["certificate_error"] = str(exc)
    summary["certificate"] = None if cert is None else cert.to_record()
    if cert is not None:
        guaranteed = cert.omega - cert.sigma
        summary["guaranteed_rate"] = guaranteed
        rf = summary.get("rate_fit")
        summary["rate_margin"] = None if rf is None else rf - guaranteed
        alpha = alpha_for(system, cert, history)
        report = diag.verify_iterative_bound(traj, cert, system.norm(U0), alpha)
        summary["bound_report"] = {"violated": report.violated, "worst_slack": report.worst_slack,
                                   "alpha": alpha}
    else:
        summary.update(guaranteed_rate=None, rate_margin=None, bound_report=None)
    if traj.energies is not None and system.labels.get("model") == "wave-internal-1d":
        e = traj.energies
        summary["energy_monotone_violations"] = len(diag.energy_monotone_check(e, 1e-10 * abs(e[0])))
    else:
        summary["energy_monotone_violations"] = None
    return traj, summary


def _provenance(system):
    keep = {k: v for k, v in system.labels.items() if k not in ("x", "mass_weights")}
    return keep


def trajectory_csv(traj, include_states=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["t", "norm"]
    if traj.energies is not None:
        header.append("energy")
    if include_states:
        header += [f"U{i}" for i in range(traj.states.shape[1])]
    w.writerow(header)
    for i, t in enumerate(traj.times):
        row = [repr(float(t)), repr(float(traj.norms[i]))]
        if traj.energies is not None:
            row.append(repr(float(traj.energies[i])))
        if include_states:
            row += [repr(float(x)) for x in traj.states[i]]
        w.writerow(row)
    return buf.getvalue()


SWEEP_COLUMNS = ("k", "certified", "k0", "guaranteed_rate", "rate_fit", "diverged",
                 "last_valid_time", "error")


def sweep(config):
    """One summary row per gain, computed concurrently and sorted by ``k``."""
    grid = sorted(float(k) for k in config.k_grid)

    def row(k):
        try:
            _, s = simulate(config, k)
            cert = s.get("certificate") or {}
            return {"k": k, "certified": cert.get("stable"), "k0": cert.get("k0"),
                    "guaranteed_rate": s.get("guaranteed_rate"), "rate_fit": s.get("rate_fit"),
                    "diverged": s["diverged"], "last_valid_time": s["last_valid_time"],
                    "error": None}
        except Exception as exc:  # row failures are recorded, the sweep continues
            return {"k": k, "certified": None, "k0": None, "guaranteed_rate": None,
                    "rate_fit": None, "diverged": None, "last_valid_time": None,
                    "error": f"{type(exc).__name__}: {exc}"}

    with ThreadPoolExecutor(max_workers=int(config.workers)) as pool:
        rows = list(pool.map(row, grid))
    return sorted(rows, key=lambda r: r["k"])


def rows_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                    for c in columns])
    return buf.getvalue()

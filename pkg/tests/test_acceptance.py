"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""

import math
import os
import subprocess
import sys
import time

import numpy as np

from delayfeedback import certificates as C
from delayfeedback import diagnostics as D
from delayfeedback.core import History
from delayfeedback.experiments import ExperimentConfig, certify_system, simulate, sweep
from delayfeedback.models import (
    G_value, build_linear_toy, build_scalar, build_wave_boundary_1d,
    build_wave_damped_boundary_delay_1d, build_wave_interface_1d, build_wave_internal_1d,
    grad_G, nodal_state,
)
from delayfeedback.solver import (
    SolverConfig, duhamel_oracle, solve_method_of_steps, solve_transport_augmented,
)

LN2 = math.log(2.0)


def test_01_certificate_identities(accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        M, omega, tau, B = rng.uniform(1, 5), rng.uniform(0.05, 5), rng.uniform(0.05, 5), rng.uniform(0.05, 5)
        k0 = C.bounded_certificate(M, omega, tau, B, 0.0).k0
        worst = max(worst, abs(C.bounded_certificate(M, omega, tau, B, k0).sigma - omega) / omega)
        c1, c2, c3 = rng.uniform(0.05, 5, 3)
        Mu = rng.uniform(0.2, 5)
        k0 = C.unbounded_certificate(Mu, omega, tau, c1, c2, c3, 0.0).k0
        worst = max(worst, abs(C.unbounded_certificate(Mu, omega, tau, c1, c2, c3, k0).sigma - omega) / omega)
    M, omega, B = 1.7, 0.8, 2.3
    lim = abs(C.bounded_certificate(M, omega, 1e-6, B, 0.0).k0 / (omega / (B * M)) - 1)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and lim <= 1e-4 and elapsed < 1.0
    accept(1, "certificate identities", ok,
           f"max rel |sigma(k0)-omega|={worst:.2e}, small-delay rel={lim:.2e}, {elapsed:.2f}s")
    assert ok


def test_02_oracle_equivalence(accept):
    t0 = time.perf_counter()
    s = build_linear_toy([-1.0, -2.0, -3.0, -4.0], seed=0, k=0.4)
    U0 = np.array([1.0, -0.5, 0.25, 2.0])
    h = History.from_function(lambda t: np.array([math.cos(t), math.sin(2 * t), 1.0, 1 - t]), 1.0, 1024)
    a = solve_method_of_steps(s, U0, h, SolverConfig.from_tau(1.0, 1024, 10.0))
    b = duhamel_oracle(s, U0, h, 10.0, quad_points_per_interval=8, dt=1.0 / 1024)
    rel = np.linalg.norm(a.states - b.states, axis=1) / np.linalg.norm(b.states, axis=1)
    elapsed = time.perf_counter() - t0
    ok = rel.max() <= 1e-5 and elapsed < 10.0
    accept(2, "method of steps vs Duhamel oracle", ok, f"max rel={rel.max():.2e}, {elapsed:.2f}s")
    assert ok


def test_03_closed_form_dde(accept):
    s = build_scalar(a=-1.0, b=1.0, k=0.5, tau=LN2)
    h = History.constant([1.0], LN2, 2048)
    tr = solve_method_of_steps(s, [1.0], h, SolverConfig.from_tau(LN2, 2048, LN2))
    err = abs(tr.states[-1, 0] - 0.75)
    ok = err <= 1e-8 and abs(tr.times[-1] - LN2) < 1e-15
    accept(3, "closed-form scalar DDE at t = tau", ok, f"|U(tau)-0.75|={err:.2e}")
    assert ok


def test_04_iterative_bound_and_rate(accept):
    t0 = time.perf_counter()
    s0 = build_linear_toy([-1.0, -2.0, -3.0, -4.0], seed=0)
    M, omega = 1.0, 1.0  # normal generator: exact constants
    Bnorm = D.feedback_norm(s0)
    k = 0.5 * C.bounded_certificate(M, omega, 1.0, Bnorm, 0.0).k0
    s = s0.with_gain(k)
    cert = C.bounded_certificate(M, omega, 1.0, Bnorm, k)
    U0 = np.array([1.0, -1.0, 0.5, 0.0])
    h = History.constant(U0, 1.0, 128)
    tr = solve_method_of_steps(s, U0, h, SolverConfig.from_tau(1.0, 128, 20.0))
    alpha = C.history_weight_alpha(h, omega, norm=lambda y: s.norm(s.feedback @ y))
    rep = D.verify_iterative_bound(tr, cert, s.norm(U0), alpha, tol=1e-9)
    fit = D.fit_decay_rate(tr, window=(10.0, 20.0))
    guaranteed = omega - cert.sigma
    elapsed = time.perf_counter() - t0
    ok = not rep.violated and fit.rate_fit >= guaranteed - 0.05 and elapsed < 10.0
    accept(4, "iterative bound and guaranteed rate on the normal toy", ok,
           f"violations={len(rep.violations)}, rate_fit={fit.rate_fit:.4f} >= "
           f"{guaranteed:.4f}-0.05, {elapsed:.2f}s")
    assert ok


def test_05_transport_reformulation(accept):
    s = build_scalar()
    h = History.constant([1.0], LN2, 64)
    errs = []
    for n_rho in (400, 800):
        cfg = SolverConfig.from_tau(LN2, 2 * n_rho, 10 * LN2)
        a = solve_transport_augmented(s, [1.0], h, cfg, n_rho)
        b = solve_method_of_steps(s, [1.0], h, cfg)
        errs.append(np.max(np.abs(a.states - b.states)))
    ratio = errs[1] / errs[0]
    ok = errs[0] <= 1e-3 and 0.4 <= ratio <= 0.6
    accept(5, "transport reformulation", ok, f"err(400)={errs[0]:.2e}, halving ratio={ratio:.3f}")
    assert ok


def test_06_energy_monotonicity(accept):
    t0 = time.perf_counter()
    beta, tau = 2.0, 1.0
    s = build_wave_internal_1d(50, 1.0, 0.2, tau, beta, omega1=(0.0, 1.0), omega2=(0.2, 0.8))
    cert = certify_system(s)
    rho0 = D.smallness_radius(cert.omega_prime, cert.Mtilde, D.psi_constant(s, beta), beta)
    U0 = nodal_state(s, lambda x: np.sin(np.pi * x), lambda x: np.sin(2 * np.pi * x))
    x2 = s.output_map[:, 50:] @ np.asarray(s.labels["x"])
    h = History.from_function(lambda t: np.sin(2 * np.pi * x2) * math.cos(t), tau, 128)
    scale = 0.5 * rho0 / D.data_size(s, U0, h)
    U0, h = scale * U0, History(tau, scale * h.samples)
    size = D.data_size(s, U0, h)
    tr = solve_method_of_steps(s, U0, h, SolverConfig.from_tau(tau, 128, 30.0))
    E = D.energy_series(s, tr, h)
    bad = D.energy_monotone_check(E, 1e-10 * E[0])
    elapsed = time.perf_counter() - t0
    ok = cert.stable and size <= rho0 and not tr.diverged and not bad and elapsed < 30.0
    accept(6, "energy monotonicity for the semilinear wave", ok,
           f"rho0={rho0:.4f}, data={size:.4f}, violations={len(bad)}, "
           f"max dE/E0={np.diff(E).max() / E[0]:.1e}, {elapsed:.2f}s")
    assert ok


WAVE_FEEDBACK_MODELS = {
    "wave-boundary-1d": lambda: build_wave_boundary_1d(50, 1.0, 0.0, 1.0),
    "wave-interface-1d": lambda: build_wave_interface_1d(50, 0.5, 0.0, 1.0),
    "wave-damped-boundary-delay-1d": lambda: build_wave_damped_boundary_delay_1d(50, 1.0, 0.0, 1.0),
}


def test_07_undelayed_stability(accept):
    details, ok = [], True
    for name, build in WAVE_FEEDBACK_MODELS.items():
        s = build()
        absc = D.spectral_abscissa(s.A)
        cfg = ExperimentConfig.from_dict({"model": name, "k": 0.0,
                                          "solver": {"steps_per_delay": 128, "T": 40.0},
                                          "fit_window": [20.0, 40.0]})
        _, summary = simulate(cfg)
        rate = summary["rate_fit"]
        rel = abs(rate + absc) / abs(absc)
        ok &= absc < 0 and rel <= 0.10
        details.append(f"{name}: abscissa={absc:.4f} rate_fit={rate:.4f} rel={rel:.3f}")
    accept(7, "undelayed stability of the wave feedback models", ok, "; ".join(details))
    assert ok


def test_08_delay_induced_destabilization(accept):
    grid = [round(0.1 * i, 10) for i in range(1, 21)]
    cfg = ExperimentConfig.from_dict({
        "model": "wave-damped-boundary-delay-1d", "params": {"N": 50, "alpha_damp": 1.0, "tau": 1.0},
        "k_grid": grid, "solver": {"steps_per_delay": 128, "T": 40.0}, "workers": 4})
    rows = sweep(cfg)
    decaying = [r["k"] for r in rows if r["rate_fit"] is not None and r["rate_fit"] > 0 and not r["diverged"]]
    growing = [r["k"] for r in rows if r["diverged"] or (r["rate_fit"] is not None and r["rate_fit"] < 0)]
    ok = bool(decaying) and bool(growing) and all(r["error"] is None for r in rows)
    accept(8, "delay-induced destabilization in the damped boundary-delay model", ok,
           f"decaying k={decaying}, growing/diverged k={growing[:3]}...{growing[-1:] if growing else ''}")
    assert ok


def test_09_reflection_coefficient(accept):
    errs, sups = [], []
    for a in (0.5, 1.0, 2.0):
        errs.append(abs(abs(D.reflection_coefficient(0.0, a)) - 1.0))
        errs.append(abs(abs(D.reflection_coefficient(math.pi / 2, a)) - 2 * a / math.pi))
        sups.append(D.sup_scan(a, np.linspace(-200.0, 200.0, 400001))[0])
    ok = max(errs) <= 1e-10 and all(np.isfinite(sups))
    accept(9, "reflection coefficient", ok,
           f"max closed-form err={max(errs):.1e}, sup|c| for a=0.5,1,2: {', '.join(f'{v:.4f}' for v in sups)}")
    assert ok


def test_10_admissibility_constants(accept):
    from delayfeedback.core import DelaySystem
    scalar = DelaySystem(A=[[-1.0]], feedback=[[1.0]], output_map=[[1.0]], tau=1.0)
    c2 = D.estimate_admissibility(scalar, m=2048).C2
    ref = math.sqrt((1 - math.exp(-2)) / 2)
    rel_c2 = abs(c2 - ref) / ref
    models = {"scalar": build_scalar(), "linear-toy": build_linear_toy([-1.0, -2.0, -3.0, -4.0]),
              **{k: f() for k, f in WAVE_FEEDBACK_MODELS.items()}}
    worst = 0.0
    for s in models.values():
        a = D.estimate_admissibility(s, m=1024)
        b = D.estimate_admissibility(s, m=2048)
        for x, y in ((a.C1, b.C1), (a.C2, b.C2), (a.C3, b.C3)):
            worst = max(worst, abs(x - y) / y)
    ok = rel_c2 <= 1e-3 and worst <= 0.005
    accept(10, "admissibility constants", ok,
           f"scalar C2 rel err={rel_c2:.1e}, max change m=1024->2048={100 * worst:.4f}%")
    assert ok


def test_11_gradient_check(accept):
    rng = np.random.default_rng(7)
    eps, worst = 1e-6, 0.0
    for _ in range(20):
        n = 30
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        beta = rng.uniform(0.1, 5.0)
        w = np.full(n, 1.0 / n)
        fd = (G_value(u + eps * v, beta, w) - G_value(u - eps * v, beta, w)) / (2 * eps)
        exact = float(np.sum(w * grad_G(u, beta) * v))
        worst = max(worst, abs(fd - exact) / abs(exact))
    ok = worst <= 1e-4
    accept(11, "gradient check", ok, f"max rel err={worst:.1e}")
    assert ok


_DETERMINISM_SCRIPT = r"""
import hashlib, os, sys
from delayfeedback.cli import main
out = sys.argv[1]
runs = [
    ["simulate", "--model", "scalar", "--k", "0.5", "--T", "3", "--states"],
    ["simulate", "--model", "linear-toy", "--k", "0.2", "--T", "5", "--states", "--method", "duhamel"],
    ["simulate", "--model", "wave-boundary-1d", "--N", "20", "--k", "0.1", "--T", "5", "--steps-per-delay", "32", "--states"],
    ["simulate", "--model", "wave-interface-1d", "--N", "20", "--k", "0.1", "--T", "5", "--steps-per-delay", "32"],
    ["simulate", "--model", "wave-internal-1d", "--N", "20", "--k", "0.2", "--T", "5", "--steps-per-delay", "32",
     "--param", "omega2=[0.2, 0.8]"],
    ["simulate", "--model", "scalar", "--k", "0.5", "--T", "3", "--method", "transport", "--n-rho", "16",
     "--steps-per-delay", "32"],
    ["sweep", "--model", "wave-damped-boundary-delay-1d", "--N", "20", "--k", "1.0", "0.1", "0.5",
     "--T", "10", "--steps-per-delay", "32", "--workers", "3"],
    ["verify-bounds", "--model", "linear-toy", "--k", "0.3", "--T", "5"],
    ["scan-reflection", "--a", "1.0"],
]
digest = []
for i, argv in enumerate(runs):
    path = os.path.join(out, f"{i}.csv")
    extra = ["--csv", path]
    if argv[0] == "simulate":
        extra += ["--summary", os.path.join(out, f"{i}.json")]
    main(argv + extra)
    with open(path, "rb") as fh:
        digest.append(hashlib.sha256(fh.read()).hexdigest())
print(" ".join(digest))
"""


def test_12_determinism(accept, tmp_path):
    digests = []
    for rep in range(2):
        d = tmp_path / f"run{rep}"
        d.mkdir()
        r = subprocess.run([sys.executable, "-c", _DETERMINISM_SCRIPT, str(d)],
                           capture_output=True, text=True, env={**os.environ, "PYTHONHASHSEED": str(rep)})
        assert r.returncode == 0, r.stderr
        digests.append(r.stdout.split())
    files = sorted(p.name for p in (tmp_path / "run0").glob("*.csv"))
    same = [(tmp_path / "run0" / f).read_bytes() == (tmp_path / "run1" / f).read_bytes() for f in files]
    ok = len(files) == 9 and all(same) and digests[0] == digests[1]
    accept(12, "determinism of CSV outputs", ok, f"{sum(same)}/{len(files)} CSVs byte-identical across two processes")
    assert ok

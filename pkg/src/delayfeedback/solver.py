"""Time integration of delay systems.

Three independent routes:

* ``solve_method_of_steps`` -- interval by interval, the delayed term is a
  known forcing read from the history (first interval) or from the already
  computed trajectory; the forced ODE is advanced by RK4 or implicit midpoint.
* ``duhamel_oracle`` -- linear systems only; exact matrix exponentials and
  Gauss-Legendre quadrature of the variation-of-constants integral.
* ``solve_transport_augmented`` -- the delay is replaced by a transport
  equation for ``Z(t, rho) = C* U(t - tau rho)`` discretized by upwinding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .core import Trajectory, validate_system

log = logging.getLogger(__name__)

INTEGRATORS = ("rk4", "implicit-midpoint")


class ConfigurationError(ValueError):
    pass


class UnsupportedRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-step settings. Build with ``SolverConfig.from_tau`` so that
    ``tau / dt`` is an exact integer."""

    dt: float
    T: float
    integrator: str = "rk4"
    blowup_guard: float = 1e12
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"integrator must be one of {INTEGRATORS}")
        if int(self.record_every) < 1:
            raise ConfigurationError("record_every must be >= 1")

    @classmethod
    def from_tau(cls, tau, steps_per_delay, T, **kw):
        return cls(dt=tau / steps_per_delay, T=T, **kw)

    def steps_per_delay(self, tau):
        """Integer ``tau / dt``; raises if the step does not divide the delay."""
        r = tau / self.dt
        n = int(round(r))
        if n < 1 or abs(r - n) > 8 * np.finfo(float).eps * max(r, 1.0):
            raise ConfigurationError(f"dt={self.dt!r} does not divide tau={tau!r}")
        return n


def _lagrange_midpoints(y):
    """Cubic interpolation of uniform samples ``y[0..n]`` at ``i + 1/2``."""
    n = y.shape[0] - 1
    if n < 3:
        return 0.5 * (y[:-1] + y[1:])
    mid = np.empty((n,) + y.shape[1:])
    c = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
    mid[1:n - 1] = (c[0] * y[0:n - 2] + c[1] * y[1:n - 1]
                    + c[2] * y[2:n] + c[3] * y[3:n + 1])
    e = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0
    mid[0] = e[0] * y[0] + e[1] * y[1] + e[2] * y[2] + e[3] * y[3]
    mid[n - 1] = e[0] * y[n] + e[1] * y[n - 1] + e[2] * y[n - 2] + e[3] * y[n - 3]
    return mid


def _resample(samples, n):
    """History samples on an ``n``-step grid (exact when the grids coincide)."""
    m = samples.shape[0] - 1
    if m == n:
        return np.array(samples)
    x = np.linspace(0.0, 1.0, m + 1)
    if m < 3:
        return np.array([np.interp(np.linspace(0, 1, n + 1), x, col) for col in samples.T]).T
    return CubicSpline(x, samples, axis=0)(np.linspace(0.0, 1.0, n + 1))


def _check_inputs(system, U0, history):
    problems = validate_system(system)
    if problems:
        raise ConfigurationError("; ".join(problems))
    U0 = np.asarray(U0, dtype=float)
    if U0.shape != (system.dim,):
        raise ConfigurationError(f"U0 must have shape ({system.dim},)")
    if history.samples.shape[1] != system.n_outputs:
        raise ConfigurationError(
            f"history has {history.samples.shape[1]} channels, system expects {system.n_outputs}")
    if not math.isclose(history.tau, system.tau, rel_tol=1e-14):
        raise ConfigurationError("history tau differs from system tau")
    return U0


def _rk4_step(system, U, dt, g0, gm, g1):
    k1 = system.rhs(U, g0)
    k2 = system.rhs(U + 0.5 * dt * k1, gm)
    k3 = system.rhs(U + 0.5 * dt * k2, gm)
    k4 = system.rhs(U + dt * k3, g1)
    return U + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _MidpointStepper:
    def __init__(self, system, dt):
        n = system.dim
        self.system = system
        self.dt = dt
        self.lu = la.lu_factor(np.eye(n) - 0.5 * dt * system.A)
        self.explicit = np.eye(n) + 0.5 * dt * system.A

    def __call__(self, U, g0, g1):
        rhs = self.explicit @ U + 0.5 * self.dt * (g0 + g1)
        nl = self.system.nonlinearity
        if nl is None:
            return la.lu_solve(self.lu, rhs)
        V = U
        for _ in range(50):
            V_new = la.lu_solve(self.lu, rhs + self.dt * nl(0.5 * (U + V)))
            if np.max(np.abs(V_new - V)) <= 1e-14 * max(1.0, np.max(np.abs(V_new))):
                return V_new
            V = V_new
        return V_new


def _finish(system, times, states, outputs, tau, diverged, last_valid, labels=None):
    times = np.asarray(times)
    states = np.asarray(states)
    return Trajectory(
        times=times, states=states, norms=system.norm(states),
        delayed_outputs=np.asarray(outputs), tau=tau, diverged=diverged,
        last_valid_time=last_valid, labels=dict(labels or system.labels),
    )


def solve_method_of_steps(system, U0, history, config):
    """Integrate the delay system on ``[0, T]`` by the method of steps.

    On ``(l tau, (l+1) tau)`` the forcing ``k B y(t - tau)`` is assembled
    from the stored samples of the previous interval and the resulting
    ODE is advanced with the configured one-step method. RK4 needs the
    forcing at half steps; it is interpolated with cubic Lagrange stencils
    kept inside the interval so derivative jumps at seams are not smeared.
    """
    U0 = _check_inputs(system, U0, history)
    n = config.steps_per_delay(system.tau)
    dt = config.dt
    n_total = int(round(config.T / dt))
    if n_total < 1:
        raise ConfigurationError("T must cover at least one step")
    rec = int(config.record_every)
    C = system.output_map
    Bk = system.k * system.feedback
    stepper = _MidpointStepper(system, dt) if config.integrator == "implicit-midpoint" else None

    segment = _resample(history.samples, n)
    U = U0.copy()
    times, states, outputs = [0.0], [U.copy()], [C @ U]
    diverged = False
    last_valid = 0.0
    step = 0
    n_intervals = -(-n_total // n)
    for ell in range(n_intervals):
        g = segment @ Bk.T
        gmid = _lagrange_midpoints(g) if stepper is None else None
        new_segment = np.empty_like(segment)
        new_segment[0] = C @ U
        for i in range(n):
            if step >= n_total:
                break
            if stepper is None:
                U = _rk4_step(system, U, dt, g[i], gmid[i], g[i + 1])
            else:
                U = stepper(U, g[i], g[i + 1])
            step += 1
            new_segment[i + 1] = C @ U
            nrm = system.norm(U)
            if not np.isfinite(nrm) or nrm > config.blowup_guard:
                diverged = True
                log.info("trajectory diverged at t=%g", step * dt)
                break
            last_valid = step * dt
            if step % rec == 0:
                times.append(step * dt)
                states.append(U.copy())
                outputs.append(new_segment[i + 1])
        if diverged or step >= n_total:
            break
        segment = new_segment
    return _finish(system, times, states, outputs, system.tau, diverged, last_valid)


def duhamel_oracle(system, U0, history, T, quad_points_per_interval=4, dt=None):
    """Variation-of-constants solution of a linear delay system.

    On interval ``l`` the state at ``t`` is
    ``exp((t - l tau) A) U(l tau) + k int_{l tau}^t exp((t - s) A) B y(s - tau) ds``,
    evaluated panel by panel on a uniform grid of step ``dt`` (default: the
    history grid) with ``quad_points_per_interval`` Gauss-Legendre nodes per
    panel. The delayed signal is a not-a-knot cubic spline through the
    samples of the previous interval.
    """
    if not system.is_linear:
        raise UnsupportedRegimeError("the Duhamel oracle needs a linear system")
    U0 = _check_inputs(system, U0, history)
    tau = system.tau
    if dt is None:
        dt = tau / history.m
    n = int(round(tau / dt))
    if abs(tau / dt - n) > 1e-9 * n:
        raise ConfigurationError("dt must divide tau")
    dt = tau / n
    A = system.A
    Bk = system.k * system.feedback
    C = system.output_map
    xq, wq = np.polynomial.legendre.leggauss(int(quad_points_per_interval))
    sq = 0.5 * dt * (xq + 1.0)  # nodes inside a panel [0, dt]
    wq = 0.5 * dt * wq
    E = la.expm(dt * A)
    P = [la.expm((dt - s) * A) @ Bk for s in sq]

    n_total = int(round(T / dt))
    seg_t = np.arange(n + 1) * dt
    hist = history.samples
    if hist.shape[0] - 1 == n:
        seg_values = hist
    else:
        seg_values = _resample(hist, n)
    U = U0.copy()
    times, states, outputs = [0.0], [U.copy()], [C @ U]
    step = 0
    while step < n_total:
        spline = CubicSpline(seg_t, seg_values, axis=0) if n >= 3 else None
        new_seg = np.empty_like(seg_values)
        new_seg[0] = C @ U
        for i in range(n):
            if step >= n_total:
                break
            s_nodes = i * dt + sq
            if spline is not None:
                y = spline(s_nodes)
            else:
                y = np.array([np.interp(s_nodes, seg_t, col) for col in seg_values.T]).T
            forcing = sum(w * (Pq @ yq) for w, Pq, yq in zip(wq, P, y))
            U = E @ U + forcing
            step += 1
            new_seg[i + 1] = C @ U
            times.append(step * dt)
            states.append(U.copy())
            outputs.append(new_seg[i + 1])
        seg_values = new_seg
    return _finish(system, times, states, outputs, tau, False, times[-1])


def augmented_generator(system, n_rho):
    """Linear generator of the coupled ``(U, Z)`` system with upwind transport.

    ``Z_j`` approximates ``C* U(t - tau j / n_rho)`` for ``j = 1..n_rho``;
    ``Z_0 = C* U(t)`` is the inflow. Returns the square matrix of size
    ``dim + n_rho * p`` and a matching Gram matrix for the norm
    ``||U||^2 + int_0^1 ||Z||^2 d rho``.
    """
    n, p = system.dim, system.n_outputs
    c = n_rho / system.tau
    size = n + n_rho * p
    G = np.zeros((size, size))
    G[:n, :n] = system.A
    G[:n, n + (n_rho - 1) * p:] = system.k * system.feedback
    I = np.eye(p)
    for j in range(n_rho):
        r = n + j * p
        G[r:r + p, r:r + p] = -c * I
        if j == 0:
            G[r:r + p, :n] = c * system.output_map
        else:
            G[r:r + p, r - p:r] = c * I
    gram = np.zeros((size, size))
    gram[:n, :n] = system.gram
    gram[n:, n:] = np.kron(np.eye(n_rho), system.output_gram) / n_rho
    return G, gram


def transport_initial_state(history, n_rho):
    """``Z(0, rho_j) = f((1 - rho_j) tau)`` on ``rho_j = j / n_rho``, ``j = 1..n_rho``.

    The history sample at time ``-rho tau`` is ``f((1 - rho) tau)``, so
    ``Z(0, 1)`` is the first stored sample.
    """
    rho = np.arange(1, n_rho + 1) / n_rho
    x_hist = np.linspace(0.0, 1.0, history.m + 1)  # position of each sample in [-tau, 0] / tau + 1
    target = 1.0 - rho
    if history.m >= 3:
        Z = CubicSpline(x_hist, history.samples, axis=0)(target)
    else:
        Z = np.array([np.interp(target, x_hist, col) for col in history.samples.T]).T
    # exact where the grids coincide
    if history.m % n_rho == 0 or n_rho % history.m == 0:
        idx = np.rint(target * history.m)
        hit = np.abs(target * history.m - idx) < 1e-9
        Z[hit] = history.samples[idx[hit].astype(int)]
    return Z


def solve_transport_augmented(system, U0, history, config, n_rho):
    """Integrate the transport reformulation with RK4; returns the U trajectory."""
    if n_rho < 8:
        raise ConfigurationError("n_rho must be >= 8")
    U0 = _check_inputs(system, U0, history)
    dt = config.dt
    if dt > system.tau / n_rho * (1 + 1e-12):
        raise ConfigurationError(f"CFL violation: dt={dt} > tau/n_rho={system.tau / n_rho}")
    G, _ = augmented_generator(system, n_rho)
    G = sp.csr_matrix(G)
    n = system.dim
    Z0 = transport_initial_state(history, n_rho)
    V = np.concatenate([U0, Z0.reshape(-1)])
    nl = system.nonlinearity

    def rhs(V):
        out = G @ V
        if nl is not None:
            out[:n] += nl(V[:n])
        return out

    n_total = int(round(config.T / dt))
    rec = int(config.record_every)
    C = system.output_map
    times, states, outputs = [0.0], [U0.copy()], [C @ U0]
    diverged = False
    last_valid = 0.0
    for step in range(1, n_total + 1):
        k1 = rhs(V)
        k2 = rhs(V + 0.5 * dt * k1)
        k3 = rhs(V + 0.5 * dt * k2)
        k4 = rhs(V + dt * k3)
        V = V + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        U = V[:n]
        nrm = system.norm(U)
        if not np.isfinite(nrm) or nrm > config.blowup_guard:
            diverged = True
            break
        last_valid = step * dt
        if step % rec == 0:
            times.append(step * dt)
            states.append(U.copy())
            outputs.append(C @ U)
    labels = dict(system.labels, solver="transport", n_rho=n_rho)
    return _finish(system, times, states, outputs, system.tau, diverged, last_valid, labels)

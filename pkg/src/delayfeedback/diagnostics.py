"""Energies, constant estimation, decay fitting and envelope checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.signal import fftconvolve
from scipy.sparse.linalg import LinearOperator, svds

from .certificates import iterative_envelope
from .core import BoundRecord, BoundReport, SemigroupEstimate
from .models import G_value, split_state


class NotExponentiallyStableError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    M_fit: float
    rate_fit: float
    residual: float
    window: tuple

    def to_record(self):
        return {"M_fit": self.M_fit, "rate_fit": self.rate_fit,
                "residual": self.residual, "window_start": self.window[0],
                "window_end": self.window[1]}


@dataclass(frozen=True)
class AdmissibilityEstimate:
    C1: float
    C2: float
    C3: float
    tau: float
    m: int
    mesh: dict


# ----------------------------------------------------------------- norms

def _chol(G):
    return np.linalg.cholesky(G)


def weighted_operator_norm(T, gram_out=None, gram_in=None):
    """``sup ||T x||_out / ||x||_in`` for Gram-matrix inner products."""
    T = np.asarray(T, dtype=float)
    Lo = np.eye(T.shape[0]) if gram_out is None else _chol(gram_out)
    Li = np.eye(T.shape[1]) if gram_in is None else _chol(gram_in)
    X = Lo.T @ T @ la.solve_triangular(Li, np.eye(T.shape[1]), lower=True).T
    return float(np.linalg.norm(X, 2))


def feedback_norm(system):
    """Model norm of the delayed operator ``B C*`` (the bounded-regime ``Bnorm``)."""
    return weighted_operator_norm(system.delayed_operator, system.gram, system.gram)


def spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(np.asarray(A, dtype=float)).real))


def semigroup_norm(A, t, gram=None):
    E = la.expm(t * np.asarray(A, dtype=float))
    return weighted_operator_norm(E, gram, gram)


def estimate_semigroup_constants(A, t_max=None, samples=200, margin=0.01, gram=None):
    """Fit ``||exp(tA)|| <= M exp(-omega t)`` by sampling.

    ``omega`` concedes ``margin`` of the spectral gap; ``M`` is the largest
    sampled value of ``||exp(tA)|| exp(omega t)`` on a log-spaced grid,
    clamped to at least one.
    """
    A = np.asarray(A, dtype=float)
    s = spectral_abscissa(A)
    if s >= 0:
        raise NotExponentiallyStableError(f"spectral abscissa {s:g} is not negative")
    omega = (1.0 - margin) * (-s)
    adaptive = t_max is None
    if adaptive:
        t_max = 20.0 / omega
    # non-normal transients can peak late; extend the horizon while the
    # maximum sits in the last quarter of the (log-spaced) grid
    shifted = A + omega * np.eye(A.shape[0])  # ||exp(tA)|| exp(omega t) without overflow
    for _ in range(12):
        ts = sample_times(t_max, samples)
        vals = np.array([semigroup_norm(shifted, t, gram) for t in ts])
        i = int(np.argmax(vals))
        if not adaptive or i < 0.75 * len(ts) or vals[i] <= 1.0:
            break
        t_max *= 4.0
    M = max(1.0, float(vals.max()))
    return SemigroupEstimate(M=M, omega=omega, margin=margin)


def sample_times(t_max, samples, shift=0.0):
    """Log-spaced times in ``(0, t_max]``; ``shift`` in (0, 1) staggers the grid."""
    lo = math.log(t_max) - math.log(1e4)
    step = (math.log(t_max) - lo) / (samples - 1)
    e = lo + (np.arange(samples) + shift) * step
    return np.exp(e[e <= math.log(t_max) + 1e-12])


# ----------------------------------------------------------------- energy

def energy(system, state, recent_outputs=None, dt=None):
    """Delay energy ``1/2 ||U||^2 - G(u) + 1/2 |k| int_{t-tau}^t ||y(s)||^2 ds``.

    ``recent_outputs`` holds the output samples on the trailing window
    ``[t - tau, t]`` at uniform spacing ``dt``; it is required whenever
    ``k != 0``.
    """
    U = np.asarray(state, dtype=float)
    E = 0.5 * float(U @ system.gram @ U)
    nl = system.nonlinearity
    if nl is not None:
        u, _ = split_state(system, U)
        E -= G_value(u, nl.beta, system.labels["mass_weights"])
    if system.k != 0.0:
        if recent_outputs is None or len(recent_outputs) < 2:
            raise ValueError("energy needs the trailing delay window of outputs")
        y = np.asarray(recent_outputs, dtype=float)
        if dt is None:
            dt = system.tau / (len(y) - 1)
        E += 0.5 * abs(system.k) * _trapz_sq(system, y, dt)
    return E


def _trapz_sq(system, y, dt):
    if len(y) < 2:
        return 0.0
    q = system.output_norm(y) ** 2
    return float(dt * (q.sum() - 0.5 * (q[0] + q[-1])))


def energy_series(system, trajectory, history):
    """Energy at every recorded time, the trailing window starting in the history.

    The recording step must divide the delay.
    """
    dt = trajectory.dt
    n = int(round(system.tau / dt))
    if abs(n * dt - system.tau) > 1e-9 * system.tau:
        raise ValueError("recording step must divide tau")
    hist = history.samples
    if history.m != n:
        from .solver import _resample
        hist = _resample(hist, n)
    y = trajectory.delayed_outputs
    out = np.empty(len(trajectory.times))
    for i, U in enumerate(trajectory.states):
        E = 0.5 * float(U @ system.gram @ U)
        nl = system.nonlinearity
        if nl is not None:
            u, _ = split_state(system, U)
            E -= G_value(u, nl.beta, system.labels["mass_weights"])
        if system.k != 0.0:
            # window [t - tau, t]: history part [t - tau, 0] plus trajectory part [0, t]
            j0 = i - n
            tail = _trapz_sq(system, y[max(j0, 0):i + 1], dt)
            head = _trapz_sq(system, hist[i:], dt) if j0 < 0 else 0.0
            E += 0.5 * abs(system.k) * (head + tail)
        out[i] = E
    return out


def energy_monotone_check(energies, tol):
    """Indices ``n`` with ``E[n+1] > E[n] + tol``."""
    e = np.asarray(energies, dtype=float)
    return [int(i) for i in np.flatnonzero(np.diff(e) > tol)]


# ----------------------------------------------------------------- contrast constant

def estimate_mu(Bstar, Cstar, rtol=1e-12):
    """Smallest ``mu`` with ``||B* u||^2 <= mu ||C* u||^2``; ``inf`` if none exists."""
    Bstar = np.atleast_2d(np.asarray(Bstar, dtype=float))
    Cstar = np.atleast_2d(np.asarray(Cstar, dtype=float))
    if not np.any(Bstar):
        return 0.0
    _, s, Vt = np.linalg.svd(Cstar)
    rank = int(np.sum(s > rtol * (s[0] if s.size else 1.0)))
    null = Vt[rank:].T
    if null.size and np.linalg.norm(Bstar @ null) > rtol * np.linalg.norm(Bstar):
        return math.inf
    Q = Vt[:rank].T
    Bq = Bstar @ Q
    Cq = Cstar @ Q
    vals = la.eigh(Bq.T @ Bq, Cq.T @ Cq, eigvals_only=True)
    return float(max(vals.max(), 0.0))


# ----------------------------------------------------------------- admissibility

def estimate_admissibility(system, tau=None, m=1024):
    """Discrete constants of the input map ``B`` on a grid of ``m`` steps.

    * C1: ``v -> Phi_tau v = int_0^tau exp((tau - s) A) B v(s) ds``
    * C2: ``z -> C* exp(t A) z`` into ``L^2(0, tau)``
    * C3: ``v -> C* Phi_t v`` into ``L^2(0, tau)``

    Integrals use the trapezoid rule on the grid and ``L^2`` norms its
    weights; state and output norms are the model Gram matrices.
    """
    if not system.is_linear:
        from .solver import UnsupportedRegimeError
        raise UnsupportedRegimeError("admissibility constants need a linear system")
    tau = system.tau if tau is None else float(tau)
    n, p = system.dim, system.n_outputs
    mesh = {"tau": tau, "m": m, "model": system.labels.get("model"), "dim": n}
    dt = tau / m
    w = np.full(m + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    sw = np.sqrt(w)
    Lw = _chol(system.gram)
    Lu = _chol(system.output_gram)
    Bs = la.solve_triangular(Lu, system.feedback.T, lower=True).T  # B Lu^{-T}
    Cs = Lu.T @ system.output_map
    E = la.expm(dt * system.A)

    EB = np.empty((m + 1, n, p))  # exp(j dt A) B
    EB[0] = Bs
    for j in range(1, m + 1):
        EB[j] = E @ EB[j - 1]
    CE = np.empty((m + 1, p, n))  # C* exp(j dt A)
    CE[0] = Cs
    for j in range(1, m + 1):
        CE[j] = CE[j - 1] @ E

    Phi = (EB[::-1] * sw[:, None, None]).transpose(1, 0, 2).reshape(n, -1)
    C1 = _norm2(Lw.T @ Phi)
    LwinvT = la.solve_triangular(Lw, np.eye(n), lower=True).T
    Obs = (CE * sw[:, None, None]).reshape(-1, n) @ LwinvT
    C2 = _norm2(Obs)
    markov = np.einsum("jpn,nq->jpq", CE, Bs)
    C3 = _c3_norm(markov, dt, sw)
    return AdmissibilityEstimate(C1, C2, C3, tau, m, mesh)


def _norm2(X):
    if not np.any(X):
        return 0.0
    small = X @ X.T if X.shape[0] <= X.shape[1] else X.T @ X
    return float(math.sqrt(max(la.eigvalsh(small)[-1], 0.0)))


def _c3_norm(markov, dt, sw):
    """Largest singular value of ``v -> (C* Phi_{t_i} v)_i`` in weighted ``l^2``.

    The map is a causal block convolution with trapezoid end corrections,
    applied with FFTs inside a Lanczos SVD.
    """
    if not np.any(markov):
        return 0.0
    m1, p, _ = markov.shape
    markov_t = markov.transpose(0, 2, 1)

    def mv(x):
        v = np.asarray(x, dtype=float).reshape(m1, p) / sw[:, None]
        conv = fftconvolve(markov, v[:, None, :], axes=0)[:m1].sum(axis=2)
        out = dt * conv
        out -= 0.5 * dt * (markov @ v[0])
        out -= 0.5 * dt * (v @ markov[0].T)
        out[0] = 0.0
        return (sw[:, None] * out).reshape(-1)

    def rmv(z):
        zz = np.asarray(z, dtype=float).reshape(m1, p) * sw[:, None]
        zz[0] = 0.0
        corr = fftconvolve(markov_t, zz[::-1][:, None, :], axes=0)[:m1].sum(axis=2)[::-1]
        out = dt * corr
        out[0] -= 0.5 * dt * np.einsum("iab,ia->b", markov, zz)
        out -= 0.5 * dt * (zz @ markov[0])
        return (out / sw[:, None]).reshape(-1)

    op = LinearOperator((m1 * p, m1 * p), matvec=mv, rmatvec=rmv, dtype=float)
    v0 = np.linspace(1.0, 2.0, m1 * p)
    s = svds(op, k=1, which="LM", return_singular_vectors=False, v0=v0, tol=1e-12)
    return float(s[0])


# ----------------------------------------------------------------- decay fitting

def fit_decay_rate(trajectory, window=None, use="norm", period=None, times=None, values=None):
    """Log-linear fit ``value ~ M_fit exp(-rate_fit t)`` through interval maxima.

    One point per period (the delay by default) inside ``window``: the
    largest sample of the interval. Pass ``times``/``values`` with
    ``trajectory=None`` to fit a raw signal.
    """
    if trajectory is not None:
        times = trajectory.times
        if use == "norm":
            values = trajectory.norms
        elif use == "energy":
            if trajectory.energies is None:
                raise ValueError("trajectory carries no energies")
            values = trajectory.energies
        else:
            raise ValueError("use must be 'norm' or 'energy'")
        if period is None:
            period = trajectory.tau
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if period is None:
        raise ValueError("period is required for raw signals")
    lo, hi = (times[0], times[-1]) if window is None else window
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12:
        raise ValueError("window must lie inside the sampled span")
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    t, v = times[sel], values[sel]
    if np.any(v <= 0):
        raise ValueError("decay fitting needs positive values in the window")
    idx = np.floor((t - lo) / period + 1e-9).astype(int)
    pts_t, pts_v = [], []
    for j in np.unique(idx):
        m = idx == j
        i = int(np.argmax(v[m]))
        pts_t.append(t[m][i])
        pts_v.append(v[m][i])
    pts_t = np.array(pts_t)
    logv = np.log(pts_v)
    if len(pts_t) < 2:
        raise ValueError("window holds fewer than two intervals")
    X = np.column_stack([np.ones_like(pts_t), pts_t])
    coef, *_ = np.linalg.lstsq(X, logv, rcond=None)
    resid = logv - X @ coef
    return DecayFit(M_fit=float(np.exp(coef[0])), rate_fit=float(-coef[1]),
                    residual=float(np.sqrt(np.mean(resid ** 2))), window=(float(lo), float(hi)))


# ----------------------------------------------------------------- envelopes

def verify_iterative_bound(trajectory, cert, U0_norm, alpha, tol=1e-9, semigroup=None):
    """Compare every recorded norm with the staircase envelope of ``cert``.

    ``slack = (envelope - measured) / envelope``; the bound only holds when
    ``cert.M``/``cert.omega`` are valid semigroup constants for the model,
    so the estimate used is carried along in the report.
    """
    env = iterative_envelope(trajectory.times, cert, U0_norm, alpha)
    records = tuple(
        BoundRecord(float(t), float(x), float(e), float((e - x) / e) if e > 0 else -math.inf)
        for t, x, e in zip(trajectory.times, trajectory.norms, env)
    )
    if semigroup is None:
        semigroup = SemigroupEstimate(max(cert.M, 1.0), cert.omega)
    return BoundReport(records=records, tolerance=tol, semigroup=semigroup)


# ----------------------------------------------------------------- reflection coefficient

def reflection_coefficient(xi, a):
    """``c(xi) = a exp(-i xi) / (xi sin xi - (a + i xi) cos xi)``."""
    xi = np.asarray(xi, dtype=float)
    den = xi * np.sin(xi) - (a + 1j * xi) * np.cos(xi)
    return a * np.exp(-1j * xi) / den


def sup_scan(a, grid=None):
    """Supremum of ``|c|`` on a grid (default ``[-200, 200]`` at step 1e-3).

    Returns ``(sup, argmax, min |denominator|)``.
    """
    if grid is None:
        grid = np.linspace(-200.0, 200.0, 400001)
    grid = np.asarray(grid, dtype=float)
    den = grid * np.sin(grid) - (a + 1j * grid) * np.cos(grid)
    mag = np.abs(a / den)
    i = int(np.argmax(mag))
    return float(mag[i]), float(grid[i]), float(np.abs(den).min())


# ----------------------------------------------------------------- smallness radius

def embedding_constant(system):
    """Discrete ``sup |u_i| / ||A^{1/2} u||`` from the stiffness block of the Gram matrix."""
    lo, hi = system.labels["u_slice"]
    S = system.gram[lo:hi, lo:hi]
    Sinv_diag = np.diag(la.inv(S))
    return float(np.sqrt(Sinv_diag.max()))


def psi_constant(system, beta):
    """``C_psi`` with ``||grad G(u)|| <= C_psi ||A^{1/2}u||^(beta+1)``."""
    w = np.asarray(system.labels["mass_weights"])
    return float(math.sqrt(w.sum()) * embedding_constant(system) ** (beta + 1))


def smallness_radius(omega_prime, Mtilde, C_psi, beta):
    """``min(psi^{-1}(1/4) / 2, psi^{-1}(omega'/Mtilde) / (2 sqrt 2))`` for ``psi(s) = C_psi s^beta``."""
    if omega_prime <= 0:
        return 0.0

    def psi_inv(y):
        return (y / C_psi) ** (1.0 / beta)

    return min(0.5 * psi_inv(0.25), psi_inv(omega_prime / Mtilde) / (2.0 * math.sqrt(2.0)))


def data_size(system, U0, history):
    """``(||U0||^2 + |k| int_0^tau ||g||^2)^{1/2}`` for a wave model and its history."""
    from .certificates import history_l2_norm
    g2 = history_l2_norm(history, system.output_gram) ** 2
    return math.sqrt(system.norm(U0) ** 2 + abs(system.k) * g2)

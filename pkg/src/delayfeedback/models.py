"""Discretized model catalog.

Every builder returns a ``DelaySystem`` in first-order form ``U = (u, u_t)``
on a uniform mesh of (0, 1). Second differences use the lumped-mass
(ghost point) convention, so the model norm

    ||U||^2 = sum_j (u_{j+1} - u_j)^2 / h + boundary terms + sum_j w_j v_j^2

is twice the discrete energy and the semi-discrete energy identities hold
exactly. Gains enter with the sign of the boundary or interface law they
discretize.

Centered differences carry high-frequency modes with vanishing group
velocity that never reach a boundary damper, so boundary-damped strings
lose their uniform decay rate as ``h -> 0``. The ``viscosity`` option adds
the mesh-vanishing term ``c h^2 (u_t)_xx`` that restores it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DelaySystem, PowerNonlinearity


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class WaveGrid:
    """``N`` interior nodes of (0, 1) with mesh width ``1 / (N + 1)``."""

    N: int

    def __post_init__(self):
        if int(self.N) < 3:
            raise PreconditionError("need N >= 3 interior nodes")

    @property
    def h(self):
        return 1.0 / (self.N + 1)

    @property
    def nodes(self):
        return np.arange(1, self.N + 1) * self.h

    @property
    def weights(self):
        return np.full(self.N, self.h)


def _stiffness(n_links, h, left_free=False, right_free=False):
    """Matrix of ``sum (u_{j+1} - u_j)^2 / h`` over the listed nodes.

    Without a free end the missing neighbour is a homogeneous Dirichlet value.
    """
    n = n_links
    S = np.zeros((n, n))
    idx = np.arange(n)
    S[idx, idx] = 2.0 / h
    S[idx[:-1], idx[:-1] + 1] = -1.0 / h
    S[idx[1:], idx[1:] - 1] = -1.0 / h
    if left_free:
        S[0, 0] = 1.0 / h
    if right_free:
        S[-1, -1] = 1.0 / h
    return S


def _first_order(S_total, weights, damping):
    """Generator of ``W u_tt = -S u - D v`` written for ``(u, v)``."""
    n = len(weights)
    winv = 1.0 / weights
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -winv[:, None] * S_total
    A[n:, n:] = -winv[:, None] * damping
    return A


def _gram(S_energy, weights):
    n = len(weights)
    G = np.zeros((2 * n, 2 * n))
    G[:n, :n] = S_energy
    G[n:, n:] = np.diag(weights)
    return G


def build_linear_toy(spectrum, seed=0, Bnorm_target=1.0, k=0.0, tau=1.0, dim=None):
    """Normal toy ``A = Q diag(spectrum) Q^T`` with a seeded dense ``B``.

    ``||exp(tA)|| = exp(max(spectrum) t)`` exactly, so ``M = 1`` and
    ``omega = -max(spectrum)``.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    if dim is not None and dim != spectrum.size:
        raise PreconditionError("dim must equal the spectrum length")
    if np.any(spectrum >= 0):
        raise PreconditionError("spectrum entries must be negative")
    n = spectrum.size
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    A = Q @ np.diag(spectrum) @ Q.T
    A = 0.5 * (A + A.T)
    B = rng.standard_normal((n, n))
    B *= Bnorm_target / np.linalg.norm(B, 2)
    labels = {"model": "linear-toy", "spectrum": spectrum.tolist(), "seed": seed,
              "Bnorm": Bnorm_target}
    return DelaySystem(A=A, feedback=B, output_map=np.eye(n), tau=tau, k=k, labels=labels)


def build_scalar(a=-1.0, b=1.0, k=0.5, tau=math.log(2.0)):
    """``u' = a u + k b u(t - tau)``."""
    return DelaySystem(A=[[a]], feedback=[[b]], output_map=[[1.0]], tau=tau, k=k,
                       labels={"model": "scalar", "a": a, "b": b})


def _indicator(x, interval):
    lo, hi = interval
    return (x > lo) & (x < hi)


def build_wave_internal_1d(N, a, k, tau, beta, omega1=(0.0, 1.0), omega2=(0.0, 1.0),
                           viscosity=0.0):
    """Semilinear string with local damping ``a`` on ``omega1`` and delayed
    damping on ``omega2``:

        u_tt - u_xx + a chi_1 u_t + k chi_2 u_t(t - tau) = |u|^beta u,

    homogeneous Dirichlet ends. The output is ``u_t`` on the ``omega2``
    nodes with the ``L^2(omega2)`` inner product; the gain is kept outside
    the indicator.
    """
    lo1, hi1 = omega1
    lo2, hi2 = omega2
    if not (0.0 <= lo1 < hi1 <= 1.0 and 0.0 <= lo2 < hi2 <= 1.0):
        raise PreconditionError("damping sets must be subintervals of (0, 1)")
    if not (lo1 <= lo2 and hi2 <= hi1):
        raise PreconditionError("omega2 must be contained in omega1")
    if not a > abs(k):
        raise PreconditionError("need a > |k|")
    if not beta > 0:
        raise PreconditionError("beta must be positive")
    grid = WaveGrid(N)
    h, x = grid.h, grid.nodes
    chi1 = _indicator(x, omega1).astype(float)
    on2 = np.flatnonzero(_indicator(x, omega2))
    if on2.size == 0:
        raise PreconditionError("omega2 contains no grid node; refine N")
    S = _stiffness(N, h)
    w = grid.weights
    A = _first_order(S, w, np.diag(a * chi1 * w) + viscosity * h * h * S)
    p = on2.size
    C = np.zeros((p, 2 * N))
    C[np.arange(p), N + on2] = 1.0
    # W^{-1} C^T W_out with W_v = h I and W_out = h I
    B = -C.T.copy()
    labels = {
        "model": "wave-internal-1d", "N": N, "h": h, "a": a, "beta": beta,
        "omega1": list(omega1), "omega2": list(omega2), "n_nodes": N,
        "viscosity": viscosity,
        "x": x.tolist(), "mass_weights": w.tolist(),
        "u_slice": [0, N], "v_slice": [N, 2 * N], "dirichlet": True,
        "note": "1D reduction of a multi-dimensional example; any beta > 0 admitted",
    }
    nl = PowerNonlinearity(beta, range(N), range(N, 2 * N))
    return DelaySystem(A=A, feedback=B, output_map=C, tau=tau, k=k, nonlinearity=nl,
                       gram=_gram(S, w),
                       output_gram=h * np.eye(p), labels=labels)


def build_wave_boundary_1d(N, a, k, tau, viscosity=1.0):
    """String with ``u_x(1) = -u_t(1) - a u(1)`` and ``u_x(0) = k u_t(0, t - tau)``.

    Both endpoints are unknowns (``N + 2`` nodes); the delayed boundary input
    is a rank-one column in the ``u_t(0)`` equation.
    """
    if not a > 0:
        raise PreconditionError("a must be positive")
    grid = WaveGrid(N)
    h = grid.h
    n = N + 2
    x = np.arange(n) * h
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    S = _stiffness(n, h, left_free=True, right_free=True)
    S_total = S.copy()
    S_total[-1, -1] += a
    D = viscosity * h * h * S
    D[-1, -1] += 1.0
    A = _first_order(S_total, w, D)
    C = np.zeros((1, 2 * n))
    C[0, n] = 1.0
    B = np.zeros((2 * n, 1))
    B[n, 0] = -1.0 / w[0]
    labels = {
        "model": "wave-boundary-1d", "N": N, "h": h, "a": a, "n_nodes": n,
        "viscosity": viscosity,
        "x": x.tolist(), "mass_weights": w.tolist(),
        "u_slice": [0, n], "v_slice": [n, 2 * n], "dirichlet": False,
    }
    return DelaySystem(A=A, feedback=B, output_map=C, tau=tau, k=k,
                       gram=_gram(S_total, w), labels=labels)


def _right_open_grid(N):
    """Nodes ``x_j = j h``, ``j = 1..N+1``: Dirichlet at 0, free end at 1."""
    grid = WaveGrid(N)
    h = grid.h
    n = N + 1
    x = np.arange(1, n + 1) * h
    w = np.full(n, h)
    w[-1] = 0.5 * h
    S = _stiffness(n, h, right_free=True)
    return h, n, x, w, S


def build_wave_interface_1d(N, a_point, k, tau, viscosity=1.0):
    """String with ``u(0) = 0``, ``u_x(1) = -u_t(1)`` and the flux jump
    ``[u_x](a) = k u_t(a, t - tau)`` at an interior node.

    ``a_point`` snaps to the nearest node; the snapped coordinate is in the labels.
    """
    if not 0.0 < a_point < 1.0:
        raise PreconditionError("a_point must lie in (0, 1)")
    h, n, x, w, S = _right_open_grid(N)
    j = int(round(a_point * (N + 1)))
    j = min(max(j, 1), N)
    idx = j - 1
    D = viscosity * h * h * S
    D[-1, -1] += 1.0
    A = _first_order(S, w, D)
    C = np.zeros((1, 2 * n))
    C[0, n + idx] = 1.0
    B = np.zeros((2 * n, 1))
    B[n + idx, 0] = -1.0 / w[idx]
    x_snap = j / (N + 1)
    labels = {
        "model": "wave-interface-1d", "N": N, "h": h, "a_point": a_point,
        "a_snapped": x_snap, "snap_error": abs(x_snap - a_point), "interface_node": idx,
        "viscosity": viscosity,
        "n_nodes": n, "x": x.tolist(), "mass_weights": w.tolist(),
        "u_slice": [0, n], "v_slice": [n, 2 * n], "dirichlet": False,
    }
    return DelaySystem(A=A, feedback=B, output_map=C, tau=tau, k=k,
                       gram=_gram(S, w), labels=labels)


def build_wave_damped_boundary_delay_1d(N, alpha_damp, k, tau, viscosity=0.0):
    """String with interior damping ``alpha u_t``, ``u(0) = 0`` and
    ``u_x(1) = k u_t(1, t - tau)``."""
    if not alpha_damp > 0:
        raise PreconditionError("alpha_damp must be positive")
    h, n, x, w, S = _right_open_grid(N)
    A = _first_order(S, w, np.diag(alpha_damp * w) + viscosity * h * h * S)
    C = np.zeros((1, 2 * n))
    C[0, 2 * n - 1] = 1.0
    B = np.zeros((2 * n, 1))
    B[2 * n - 1, 0] = 1.0 / w[-1]
    labels = {
        "model": "wave-damped-boundary-delay-1d", "N": N, "h": h, "alpha": alpha_damp,
        "viscosity": viscosity,
        "n_nodes": n, "x": x.tolist(), "mass_weights": w.tolist(),
        "u_slice": [0, n], "v_slice": [n, 2 * n], "dirichlet": False,
    }
    return DelaySystem(A=A, feedback=B, output_map=C, tau=tau, k=k,
                       gram=_gram(S, w), labels=labels)


def grad_G(u, beta):
    """Nodewise ``|u|^beta u``."""
    u = np.asarray(u, dtype=float)
    return np.abs(u) ** beta * u


def G_value(u, beta, weights):
    """``(1 / (beta + 2)) sum_i w_i |u_i|^(beta + 2)``."""
    u = np.asarray(u, dtype=float)
    return float(np.sum(np.asarray(weights) * np.abs(u) ** (beta + 2)) / (beta + 2))


def split_state(system, U):
    """``(u, u_t)`` blocks of a wave-model state."""
    lo, hi = system.labels["u_slice"]
    vlo, vhi = system.labels["v_slice"]
    U = np.asarray(U)
    return U[..., lo:hi], U[..., vlo:vhi]


def nodal_state(system, u_fn, v_fn):
    """Sample displacement and velocity functions at the model nodes."""
    x = np.asarray(system.labels["x"])
    return np.concatenate([np.asarray(u_fn(x), dtype=float) * np.ones_like(x),
                           np.asarray(v_fn(x), dtype=float) * np.ones_like(x)])


CATALOG = {
    "linear-toy": build_linear_toy,
    "scalar": build_scalar,
    "wave-internal-1d": build_wave_internal_1d,
    "wave-boundary-1d": build_wave_boundary_1d,
    "wave-interface-1d": build_wave_interface_1d,
    "wave-damped-boundary-delay-1d": build_wave_damped_boundary_delay_1d,
}


def build_model(name, **params):
    try:
        builder = CATALOG[name]
    except KeyError:
        raise PreconditionError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    return builder(**params)

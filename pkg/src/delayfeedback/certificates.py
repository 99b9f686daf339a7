"""Closed-form stability thresholds, decay rates and envelopes.

Bounded feedback: with ``||exp(tA)|| <= M exp(-omega t)`` and ``||B|| = Bnorm``
the delayed system decays for

    |k| < k0 = (exp(tau omega) - 1) / (tau Bnorm M exp(tau omega))

at the rate ``omega - sigma`` with ``sigma = log(1 + |k| tau Bnorm M exp(omega tau)) / tau``.

Unbounded feedback ``B = C C*`` is handled through the admissibility
constants C1, C2, C3 of the input map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import StabilityCertificate


class DomainError(ValueError):
    """Raised when a certificate input lies outside its admissible range."""


def _require_positive(**kw):
    for name, value in kw.items():
        if not (np.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class EnvelopeParams:
    """``bound(t) = C * (U0_norm + alpha_weight * alpha) * exp(rate * t)``."""

    C: float
    rate: float
    U0_norm: float
    alpha: float
    alpha_weight: float

    def __call__(self, t):
        return self.C * (self.U0_norm + self.alpha_weight * self.alpha) * np.exp(self.rate * np.asarray(t))


def bounded_certificate(M, omega, tau, Bnorm, k):
    _require_positive(M=M, omega=omega, tau=tau, Bnorm=Bnorm)
    growth = math.exp(tau * omega)
    k0 = math.expm1(tau * omega) / (tau * Bnorm * M * growth)
    sigma = math.log1p(abs(k) * tau * Bnorm * M * growth) / tau
    return StabilityCertificate(
        regime="bounded-linear", M=M, omega=omega, tau=tau, k=k,
        k0=k0, sigma=sigma, omega_prime=omega - sigma, stable=abs(k) < k0,
        Bnorm=Bnorm,
    )


def unbounded_certificate(M, omega, tau, C1, C2, C3, k):
    """Certificate for ``U' = A U + k C C* U(t - tau)`` with an admissible ``C``.

    ``M`` may be below one; ``M' = max(M, 1)`` enters every constant.
    """
    _require_positive(M=M, omega=omega, tau=tau, C1=C1, C2=C2, C3=C3)
    Mp = max(M, 1.0)
    C4 = max(C2, C3 / (Mp * C1))
    e2 = math.exp(2.0 * omega * tau)
    k0 = math.expm1(tau * omega) / (Mp ** 2 * C1 * C4 * e2)
    delta = abs(k) * C1 * Mp * e2
    sigma = math.log1p(abs(k) * C4 * Mp ** 2 * C1 * e2) / tau
    return StabilityCertificate(
        regime="unbounded-linear", M=M, omega=omega, tau=tau, k=k,
        k0=k0, sigma=sigma, omega_prime=omega - sigma, stable=abs(k) < k0,
        C1=C1, C2=C2, C3=C3, C4=C4, Mprime=Mp, delta=delta,
    )


def history_weight_alpha(history, omega, norm=None):
    """Trapezoid value of ``int_0^tau exp(omega s) ||f(s)|| ds``.

    The sample at ``-tau + s`` is the input ``f(s)``. ``norm`` maps one
    sample to its norm (Euclidean by default); pass the model norm of the
    delayed forcing for weighted systems.
    """
    s = history.tau + history.times
    if norm is None:
        vals = np.linalg.norm(history.samples, axis=1)
    else:
        vals = np.array([norm(x) for x in history.samples], dtype=float)
    return float(np.trapezoid(np.exp(omega * s) * vals, s))


def history_l2_norm(history, output_gram=None):
    """``||f||_{L^2(0, tau)}`` by the trapezoid rule, the weight of the unbounded regime."""
    f = history.samples
    if output_gram is None:
        sq = np.sum(f * f, axis=1)
    else:
        sq = np.einsum("ij,jk,ik->i", f, output_gram, f)
    s = history.tau + history.times
    return float(math.sqrt(max(np.trapezoid(sq, s), 0.0)))


def envelope_params(cert, U0_norm, alpha):
    if cert.regime == "unbounded-linear":
        if cert.Mprime is None or cert.delta is None:
            raise DomainError("unbounded certificate is missing Mprime/delta")
        return EnvelopeParams(cert.Mprime, cert.sigma - cert.omega, U0_norm, alpha, cert.delta)
    if cert.Bnorm is None:
        raise DomainError("bounded certificate is missing Bnorm")
    return EnvelopeParams(cert.M, cert.sigma - cert.omega, U0_norm, alpha, abs(cert.k))


def envelope_bound(t, cert, U0_norm, alpha):
    """Smooth exponential envelope ``C (||U0|| + w alpha) exp((sigma - omega) t)``."""
    return envelope_params(cert, U0_norm, alpha)(t)


def iterative_envelope(t, cert, U0_norm, alpha):
    """Staircase envelope valid on ``[n tau, (n+1) tau]``.

    Bounded: ``M (||U0|| + |k| alpha) (1 + |k| tau Bnorm M e^{omega tau})^n e^{-omega t}``.
    Unbounded: ``M' (||U0|| + delta alpha) (1 + delta C4 M')^n e^{-omega t}``.
    """
    t = np.asarray(t, dtype=float)
    # samples sitting on a seam belong to both intervals; the smaller n is valid
    n = np.maximum(np.ceil(t / cert.tau - 1e-9) - 1, 0)
    if cert.regime == "unbounded-linear":
        growth = 1.0 + cert.delta * cert.C4 * cert.Mprime
        pre = cert.Mprime * (U0_norm + cert.delta * alpha)
    else:
        growth = 1.0 + abs(cert.k) * cert.tau * cert.Bnorm * cert.M * math.exp(cert.omega * cert.tau)
        pre = cert.M * (U0_norm + abs(cert.k) * alpha)
    return pre * growth ** n * np.exp(-cert.omega * t)


def semilinear_thresholds(cert, Mtilde):
    """Attach ``gamma_max = omega' / Mtilde`` (Gronwall budget for the Lipschitz constant)."""
    if not Mtilde > 0:
        raise DomainError("Mtilde must be positive")
    gamma_max = max(cert.omega_prime, 0.0) / Mtilde
    regime = "bounded-semilinear" if cert.regime.startswith("bounded") else cert.regime
    return replace(cert, regime=regime, gamma_max=gamma_max, Mtilde=Mtilde)


def semilinear_verdict(cert, gamma):
    return bool(cert.stable and cert.gamma_max is not None and gamma < cert.gamma_max)


def h_squared(omega_prime, tau):
    """``(1/tau) int_0^tau exp(2 omega' s) ds``, stable near ``omega' = 0``."""
    x = 2.0 * omega_prime * tau
    if x == 0.0:
        return 1.0
    return math.expm1(x) / x


def tilde_M_estimate(M, Bnorm, tau, omega_prime, k=None):
    """Majorant ``max(M, 1) sqrt(1 + Bnorm^2 h^2)`` for the augmented semigroup.

    Composed from the delay-channel bound; a numerically estimated value
    can be used instead (see ``solver.augmented_generator``).
    """
    Mp = max(M, 1.0)
    return Mp * math.sqrt(1.0 + Bnorm ** 2 * h_squared(omega_prime, tau))


def with_tilde_M(cert, Mtilde=None, derivation="majorant"):
    """Certificate with ``Mtilde`` and ``gamma_max`` filled in."""
    if Mtilde is None:
        Mtilde = tilde_M_estimate(cert.M, cert.Bnorm, cert.tau, cert.omega_prime, cert.k)
    out = semilinear_thresholds(cert, Mtilde)
    return replace(out, Mtilde_derivation=derivation)


def verify_recursions(cert, ell_max, U0_norm=1.0, alpha=None):
    """Tabulate ``K2`` by its recursion and by its closed form, plus ``K1``.

    Returns a dict of arrays indexed by ``ell = 0..ell_max``.
    """
    if cert.regime != "unbounded-linear":
        raise DomainError("recursions belong to the unbounded regime")
    if alpha is None:
        alpha = cert.alpha if cert.alpha is not None else 0.0
    c = cert.C4 * cert.Mprime
    delta = cert.delta
    ell = np.arange(ell_max + 1)
    rec = np.empty(ell_max + 1)
    running = alpha  # sum_{j=-1}^{l} K2(j), starting from K2(-1) = alpha
    for i in range(ell_max + 1):
        rec[i] = c * (U0_norm + delta * running)
        running += rec[i]
    base = U0_norm + delta * alpha
    closed = c * base * (1.0 + delta * c) ** ell
    K1 = cert.Mprime * base * (1.0 + delta * c) ** ell
    rel = np.abs(rec - closed) / np.maximum(np.abs(closed), np.finfo(float).tiny)
    return {"ell": ell, "K2_recursion": rec, "K2_closed": closed, "K1": K1, "rel_err": rel}

"""Domain types shared by the solver, certificate and diagnostics modules.

All containers are frozen dataclasses; numpy arrays stored on them are
marked read-only at construction so instances can be shared freely.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _frozen(a, ndim=None, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SemigroupEstimate:
    """Constants in ``||exp(tA)|| <= M exp(-omega t)``."""

    M: float
    omega: float
    margin: float = 0.01

    def __post_init__(self):
        if not self.M >= 1.0:
            raise ValueError("M must be >= 1")
        if not self.omega > 0.0:
            raise ValueError("omega must be positive")


@dataclass(frozen=True)
class PowerNonlinearity:
    """Nodewise ``F(U) = (0, |u|^beta u)`` acting on the displacement block.

    ``u_index`` and ``v_index`` are the state positions of the nodal
    displacement and velocity components (same length).
    """

    beta: float
    u_index: tuple
    v_index: tuple

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        object.__setattr__(self, "u_index", tuple(int(i) for i in self.u_index))
        object.__setattr__(self, "v_index", tuple(int(i) for i in self.v_index))
        if len(self.u_index) != len(self.v_index):
            raise ValueError("u_index and v_index must have equal length")

    def __call__(self, U):
        out = np.zeros_like(U)
        u = U[list(self.u_index)]
        out[list(self.v_index)] = np.abs(u) ** self.beta * u
        return out

    def to_dict(self):
        return {"kind": "power", "beta": self.beta,
                "u_index": list(self.u_index), "v_index": list(self.v_index)}


@dataclass(frozen=True)
class DelaySystem:
    """Finite-dimensional realization of ``U' = A U + F(U) + k B C* U(t - tau)``.

    ``feedback`` is the (dim x p) input matrix B and ``output_map`` the
    (p x dim) matrix C*; the delayed forcing is ``k * feedback @ output_map @ U(t - tau)``.
    Bounded feedback uses an identity output map so ``feedback`` is the
    square matrix of the delayed operator.

    ``gram`` is the SPD matrix of the state inner product (model norm) and
    ``output_gram`` the one on the output space; both default to identity.
    """

    A: np.ndarray
    feedback: np.ndarray
    output_map: np.ndarray
    tau: float
    k: float = 0.0
    nonlinearity: PowerNonlinearity | None = None
    gram: np.ndarray | None = None
    output_gram: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        A = _frozen(self.A)
        object.__setattr__(self, "A", A)
        fb = _frozen(self.feedback)
        if fb.ndim == 1:
            fb = _frozen(fb.reshape(-1, 1))
        object.__setattr__(self, "feedback", fb)
        om = _frozen(self.output_map)
        if om.ndim == 1:
            om = _frozen(om.reshape(1, -1))
        object.__setattr__(self, "output_map", om)
        n = A.shape[0] if A.ndim == 2 else 0
        if self.gram is None:
            object.__setattr__(self, "gram", _frozen(np.eye(n)))
        else:
            object.__setattr__(self, "gram", _frozen(self.gram))
        p = om.shape[0] if om.ndim == 2 else 0
        if self.output_gram is None:
            object.__setattr__(self, "output_gram", _frozen(np.eye(p)))
        else:
            object.__setattr__(self, "output_gram", _frozen(self.output_gram))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "labels", dict(self.labels))

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def n_outputs(self):
        return self.output_map.shape[0]

    @property
    def is_linear(self):
        return self.nonlinearity is None

    @property
    def delayed_operator(self):
        """The dense (dim x dim) matrix ``B C*``, without the gain."""
        return self.feedback @ self.output_map

    def norm(self, U):
        """Model norm of one state or of a stack of states (rows)."""
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            return math.sqrt(max(float(U @ self.gram @ U), 0.0))
        q = np.einsum("ij,jk,ik->i", U, self.gram, U)
        return np.sqrt(np.maximum(q, 0.0))

    def output_norm(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return math.sqrt(max(float(y @ self.output_gram @ y), 0.0))
        q = np.einsum("ij,jk,ik->i", y, self.output_gram, y)
        return np.sqrt(np.maximum(q, 0.0))

    def rhs(self, U, g):
        """Right-hand side with the delayed forcing ``g`` already formed."""
        out = self.A @ U + g
        if self.nonlinearity is not None:
            out = out + self.nonlinearity(U)
        return out

    def with_gain(self, k):
        return dataclasses.replace(self, k=k)

    def to_dict(self):
        return {
            "dim": self.dim,
            "A": self.A.tolist(),
            "feedback": self.feedback.tolist(),
            "output_map": self.output_map.tolist(),
            "tau": self.tau,
            "k": self.k,
            "nonlinearity": None if self.nonlinearity is None else self.nonlinearity.to_dict(),
            "gram": self.gram.tolist(),
            "output_gram": self.output_gram.tolist(),
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d):
        nl = d.get("nonlinearity")
        if nl is not None:
            if nl.get("kind") != "power":
                raise ValueError(f"unknown nonlinearity kind {nl.get('kind')!r}")
            nl = PowerNonlinearity(nl["beta"], nl["u_index"], nl["v_index"])
        return cls(A=d["A"], feedback=d["feedback"], output_map=d["output_map"],
                   tau=d["tau"], k=d.get("k", 0.0), nonlinearity=nl,
                   gram=d.get("gram"), output_gram=d.get("output_gram"),
                   labels=d.get("labels", {}))


@dataclass(frozen=True)
class History:
    """Delayed feedback input on ``[-tau, 0]``.

    ``samples[j]`` is the value at time ``-tau + j*tau/m``; it is the input
    acting on the system at time ``j*tau/m``.
    """

    tau: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ValueError("history needs at least two samples (m >= 1)")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "tau", float(self.tau))
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def m(self):
        return self.samples.shape[0] - 1

    @property
    def times(self):
        """Sample times on ``[-tau, 0]``."""
        return -self.tau + np.arange(self.m + 1) * (self.tau / self.m)

    @classmethod
    def from_function(cls, f, tau, m, p=None):
        """Sample ``f(s)`` for ``s`` in ``[0, tau]`` (the input at time ``s``)."""
        s = np.arange(m + 1) * (tau / m)
        vals = np.array([np.atleast_1d(f(si)) for si in s], dtype=float)
        if p is not None and vals.shape[1] != p:
            vals = np.broadcast_to(vals, (m + 1, p)).copy()
        return cls(tau, vals)

    @classmethod
    def constant(cls, value, tau, m):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(tau, np.tile(value, (m + 1, 1)))

    def to_dict(self):
        return {"tau": self.tau, "m": self.m, "samples": self.samples.tolist()}

    @classmethod
    def from_dict(cls, d):
        h = cls(d["tau"], d["samples"])
        if "m" in d and int(d["m"]) != h.m:
            raise ValueError("history m does not match sample count")
        return h


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    delayed_outputs: np.ndarray
    tau: float
    energies: np.ndarray | None = None
    diverged: bool = False
    last_valid_time: float | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "states", "norms", "delayed_outputs"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.energies is not None:
            object.__setattr__(self, "energies", _frozen(self.energies))
        if self.last_valid_time is None and len(self.times):
            object.__setattr__(self, "last_valid_time", float(self.times[-1]))

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def with_energies(self, energies):
        return dataclasses.replace(self, energies=np.asarray(energies, dtype=float))

    def to_dict(self):
        return {
            "times": self.times.tolist(), "states": self.states.tolist(),
            "norms": self.norms.tolist(), "delayed_outputs": self.delayed_outputs.tolist(),
            "tau": self.tau,
            "energies": None if self.energies is None else self.energies.tolist(),
            "diverged": self.diverged, "last_valid_time": self.last_valid_time,
            "labels": self.labels,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(times=d["times"], states=d["states"], norms=d["norms"],
                   delayed_outputs=d["delayed_outputs"], tau=d["tau"],
                   energies=d.get("energies"), diverged=d.get("diverged", False),
                   last_valid_time=d.get("last_valid_time"), labels=d.get("labels", {}))


@dataclass(frozen=True)
class StabilityCertificate:
    """Closed-form stability verdict for one gain ``k``.

    Fields not used by a regime stay ``None``.
    """

    regime: str
    M: float
    omega: float
    tau: float
    k: float
    k0: float
    sigma: float
    omega_prime: float
    stable: bool
    Bnorm: float | None = None
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    C4: float | None = None
    Mprime: float | None = None
    delta: float | None = None
    gamma_max: float | None = None
    Mtilde: float | None = None
    Mtilde_derivation: str | None = None
    alpha: float | None = None

    REGIMES = ("bounded-linear", "bounded-semilinear", "unbounded-linear")

    def to_record(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_record(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown certificate fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class BoundRecord:
    t: float
    measured_norm: float
    envelope_value: float
    slack: float


@dataclass(frozen=True)
class BoundReport:
    records: tuple
    tolerance: float
    semigroup: SemigroupEstimate | None = None

    @property
    def worst_slack(self):
        return min((r.slack for r in self.records), default=math.inf)

    @property
    def violated(self):
        return any(r.slack < -self.tolerance for r in self.records)

    @property
    def violations(self):
        return [r for r in self.records if r.slack < -self.tolerance]


def validate_system(system):
    """Check the type invariants of a ``DelaySystem``.

    Returns a list of human readable violations, empty when the system is
    well formed. Never raises.
    """
    problems = []
    A = system.A
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        problems.append(f"A must be square, got shape {A.shape}")
        return problems
    n = A.shape[0]
    if n < 1:
        problems.append("dim must be >= 1")
    if not (np.isfinite(system.tau) and system.tau > 0):
        problems.append("tau must be positive")
    if not np.isfinite(system.k):
        problems.append("k must be finite")
    fb, om = system.feedback, system.output_map
    if fb.ndim != 2 or fb.shape[0] != n:
        problems.append(f"feedback must have {n} rows, got shape {fb.shape}")
    if om.ndim != 2 or om.shape[1] != n:
        problems.append(f"output_map must have {n} columns, got shape {om.shape}")
    if fb.ndim == 2 and om.ndim == 2 and fb.shape[1] != om.shape[0]:
        problems.append(
            f"feedback columns ({fb.shape[1]}) must match output_map rows ({om.shape[0]})")
    if system.gram.shape != (n, n):
        problems.append(f"gram must be {n}x{n}, got shape {system.gram.shape}")
    elif not _is_spd(system.gram):
        problems.append("gram must be symmetric positive definite")
    p = om.shape[0] if om.ndim == 2 else 0
    if system.output_gram.shape != (p, p):
        problems.append(f"output_gram must be {p}x{p}, got shape {system.output_gram.shape}")
    elif p and not _is_spd(system.output_gram):
        problems.append("output_gram must be symmetric positive definite")
    for name in ("A", "feedback", "output_map"):
        if not np.all(np.isfinite(getattr(system, name))):
            problems.append(f"{name} has non-finite entries")
    nl = system.nonlinearity
    if nl is not None:
        idx = nl.u_index + nl.v_index
        if any(i < 0 or i >= n for i in idx):
            problems.append("nonlinearity indices out of range")
    return problems


def _is_spd(G):
    if not np.allclose(G, G.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(G).max())):
        return False
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return False
    return True


def dumps(obj, **kwargs):
    """Serialize a ``DelaySystem``, ``History`` or ``Trajectory`` to JSON text."""
    kinds = {DelaySystem: "DelaySystem", History: "History", Trajectory: "Trajectory"}
    kind = kinds.get(type(obj))
    if kind is None:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    payload: dict[str, Any] = {"type": kind}
    payload.update(obj.to_dict())
    return json.dumps(payload, **kwargs)


def loads(text):
    d = json.loads(text)
    kind = d.pop("type", None)
    cls = {"DelaySystem": DelaySystem, "History": History, "Trajectory": Trajectory}.get(kind)
    if cls is None:
        raise ValueError(f"unknown object type {kind!r}")
    if cls is DelaySystem:
        d.pop("dim", None)
    return cls.from_dict(d)

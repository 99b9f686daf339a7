import numpy as np
import pytest
import scipy.linalg as la

from delayfeedback.core import validate_system
from delayfeedback.diagnostics import semigroup_norm, spectral_abscissa
from delayfeedback.models import (
    CATALOG, G_value, PreconditionError, WaveGrid, build_linear_toy, build_model,
    build_wave_boundary_1d, build_wave_damped_boundary_delay_1d, build_wave_interface_1d,
    build_wave_internal_1d, grad_G, nodal_state, split_state,
)

WAVES = {
    "wave-internal-1d": lambda N, k=0.0: build_wave_internal_1d(N, 1.0, k, 1.0, 2.0),
    "wave-boundary-1d": lambda N, k=0.0: build_wave_boundary_1d(N, 1.0, k, 1.0),
    "wave-interface-1d": lambda N, k=0.0: build_wave_interface_1d(N, 0.5, k, 1.0),
    "wave-damped-boundary-delay-1d": lambda N, k=0.0: build_wave_damped_boundary_delay_1d(N, 1.0, k, 1.0),
}


def test_toy_is_normal_with_unit_constant():
    s = build_linear_toy([-1.0, -2.0], seed=4)
    for t in np.linspace(0.0, 10.0, 41):
        assert semigroup_norm(s.A, t) * np.exp(t) <= 1 + 1e-10
    assert np.linalg.norm(s.feedback, 2) == pytest.approx(1.0, abs=1e-12)
    assert validate_system(s) == [] and s.is_linear


def test_toy_is_seeded():
    a, b = build_linear_toy([-1.0, -3.0], seed=7), build_linear_toy([-1.0, -3.0], seed=7)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.feedback, b.feedback)


def test_toy_rejects_unstable_spectrum():
    with pytest.raises(PreconditionError):
        build_linear_toy([-1.0, 0.5])


@pytest.mark.parametrize("name", sorted(WAVES))
def test_catalog_models_are_valid(name):
    s = WAVES[name](30, k=0.2)
    assert validate_system(s) == []
    la.cholesky(s.gram)
    la.cholesky(s.output_gram)
    assert s.labels["model"] == name


@pytest.mark.parametrize("name", sorted(WAVES))
def test_undelayed_abscissa_negative_and_mesh_converged(name):
    a50 = spectral_abscissa(WAVES[name](50).A)
    a100 = spectral_abscissa(WAVES[name](100).A)
    assert a50 < 0
    assert abs(a100 - a50) <= 0.02 * abs(a100)


@pytest.mark.parametrize("name", sorted(WAVES))
def test_gram_is_energy_of_undelayed_flow(name):
    # the undelayed generator is dissipative in the model norm: W A + A^T W <= 0
    s = WAVES[name](20)
    sym = s.gram @ s.A + s.A.T @ s.gram
    assert np.linalg.eigvalsh(0.5 * (sym + sym.T)).max() <= 1e-10


def test_internal_dimensions_and_zero_nonlinearity():
    s = build_wave_internal_1d(4, 1.0, 0.2, 1.0, 2.0)
    assert s.dim == 8
    assert np.array_equal(s.nonlinearity(np.zeros(8)), np.zeros(8))


def test_internal_preconditions():
    with pytest.raises(PreconditionError):
        build_wave_internal_1d(20, 1.0, 0.2, 1.0, 2.0, omega1=(0.2, 0.6), omega2=(0.5, 0.9))
    with pytest.raises(PreconditionError):
        build_wave_internal_1d(20, 0.2, 0.2, 1.0, 2.0)
    with pytest.raises(PreconditionError):
        build_wave_internal_1d(20, 1.0, 0.2, 1.0, 0.0)


def test_boundary_output_and_feedback_column():
    s = build_wave_boundary_1d(50, 1.0, 0.3, 1.0)
    U = np.zeros(s.dim)
    _, v = split_state(s, np.arange(s.dim))
    U[v[0]] = 3.0
    assert s.output_map @ U == pytest.approx([3.0])
    col = s.feedback[:, 0]
    assert np.flatnonzero(col).tolist() == [int(v[0])]


def test_interface_source_and_snapping():
    s = build_wave_interface_1d(49, 0.5, 0.3, 1.0)
    assert s.labels["snap_error"] == 0.0 and s.labels["a_snapped"] == 0.5
    nz = np.flatnonzero(s.feedback[:, 0])
    _, v = split_state(s, np.arange(s.dim))
    assert nz.tolist() == [int(v[s.labels["interface_node"]])]
    assert WaveGrid(49).h == pytest.approx(0.02)


def test_damped_model_output_and_overdamping():
    s = build_wave_damped_boundary_delay_1d(50, 1.0, 0.0, 1.0)
    U = np.zeros(s.dim)
    U[-1] = 2.5
    assert s.output_map @ U == pytest.approx([2.5])
    for alpha in (0.1, 1.0, 10.0):
        assert spectral_abscissa(build_wave_damped_boundary_delay_1d(50, alpha, 0.0, 1.0).A) < 0


def test_nodal_state_layout():
    s = build_wave_boundary_1d(10, 1.0, 0.0, 1.0)
    U = nodal_state(s, lambda x: x, lambda x: 2 * x)
    u, v = split_state(s, U)
    assert np.allclose(u, s.labels["x"]) and np.allclose(v, 2 * np.asarray(s.labels["x"]))


def test_build_model_by_name():
    assert set(CATALOG) == {"linear-toy", "scalar", *WAVES}
    s = build_model("wave-boundary-1d", N=10, a=1.0, k=0.0, tau=1.0)
    assert s.labels["model"] == "wave-boundary-1d"
    with pytest.raises(PreconditionError):
        build_model("membrane")


# ------------------------------------------------------------ nonlinearity

def test_grad_G_basic_values():
    assert np.array_equal(grad_G(np.zeros(3), 2.0), np.zeros(3))
    assert G_value(np.zeros(3), 2.0, np.ones(3)) == 0.0
    assert grad_G(np.array([-1.0]), 1.0)[0] == -1.0


def test_G_value_quadrature():
    n = 200
    w = np.full(n + 1, 1.0 / n)
    w[0] = w[-1] = 0.5 / n
    # int_0^1 1^{beta+2} / (beta + 2) dx = 1/4 for beta = 2
    assert G_value(np.ones(n + 1), 2.0, w) == pytest.approx(0.25, rel=1e-12)


def test_grad_G_matches_finite_differences():
    rng = np.random.default_rng(11)
    eps = 1e-6
    for _ in range(20):
        n = 12
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        beta = rng.uniform(0.2, 4.0)
        w = rng.uniform(0.05, 0.2, n)
        fd = (G_value(u + eps * v, beta, w) - G_value(u - eps * v, beta, w)) / (2 * eps)
        exact = np.sum(w * grad_G(u, beta) * v)
        assert abs(fd - exact) <= 1e-4 * abs(exact)

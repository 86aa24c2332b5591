import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perwave.model import (builtin_viscous_psystem, linear_system, linearized_coefficient, make_system,
                           rotating_cubic_system)
from perwave.numerics import PeriodicGrid, SpectralField


def test_psystem_values_at_origin():
    sy = builtin_viscous_psystem(1.0, -1.0, 0.0)
    assert np.allclose(sy.flux(np.zeros(2)), 0.0)
    assert np.allclose(sy.jacobian(np.zeros(2)), [[0, -1], [1, 0]])


def test_psystem_jacobian_at_one():
    sy = builtin_viscous_psystem(1.0, -1.0, 0.0)
    assert np.allclose(sy.jacobian(np.array([1.0, 0.0])), [[0, -1], [-2, 0]])


def _fd_jacobian(sy, w, h=1e-6):
    cols = []
    for j in range(sy.n):
        e = np.zeros(sy.n)
        e[j] = h
        cols.append((sy.flux(w + e) - sy.flux(w - e)) / (2 * h))
    return np.stack(cols, axis=1)


def _fd_hessian(sy, w, h=1e-6):
    out = np.zeros((sy.n, sy.n, sy.n))
    for k in range(sy.n):
        e = np.zeros(sy.n)
        e[k] = h
        out[:, :, k] = (sy.jacobian(w + e) - sy.jacobian(w - e)) / (2 * h)
    return out


@pytest.mark.parametrize("sy", [builtin_viscous_psystem(), rotating_cubic_system(-1.0, 2.0, 1.0)],
                         ids=["psystem", "rotating_cubic"])
def test_derivatives_match_finite_differences(sy):
    rng = np.random.default_rng(3)
    worst_j = worst_h = 0.0
    for _ in range(100):
        w = rng.uniform(-1.5, 1.5, sy.n)
        J = sy.jacobian(w)
        worst_j = max(worst_j, np.max(np.abs(J - _fd_jacobian(sy, w))) / max(1.0, np.max(np.abs(J))))
        H = sy.hessian(w)
        worst_h = max(worst_h, np.max(np.abs(H - _fd_hessian(sy, w))) / max(1.0, np.max(np.abs(H))))
    assert worst_j < 1e-6 and worst_h < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-2, 2), st.floats(-2, 2))
def test_linear_flux_is_its_own_jacobian(entries, a, b):
    A = np.array(entries).reshape(2, 2)
    sy = linear_system(A)
    w = np.array([a, b])
    assert np.allclose(sy.flux(w), A @ w)
    assert np.allclose(sy.jacobian(w), A)
    assert np.all(sy.hessian(w) == 0)


def test_flux_vectorises_over_nodes():
    sy = rotating_cubic_system(-1.0, 2.0, 1.0)
    W = np.random.default_rng(0).standard_normal((2, 7))
    J = sy.jacobian(W)
    for m in range(7):
        assert np.allclose(J[:, :, m], sy.jacobian(W[:, m]))


def test_linearized_coefficient_constant_profile():
    sy = builtin_viscous_psystem()
    g = PeriodicGrid(8, 1.0)
    A = linearized_coefficient(sy, SpectralField(g, np.tile([[0.3], [0.1]], (1, 8))))
    for m in range(8):
        assert np.allclose(A[:, :, m], sy.jacobian(np.array([0.3, 0.1])))


def test_linearized_coefficient_closed_form(duffing):
    A = linearized_coefficient(duffing.system, duffing.profile)
    u = np.real(duffing.profile.values[0])
    assert np.max(np.abs(A[1, 0] + (3 * u ** 2 - 1))) < 1e-14


def test_linearized_coefficient_matches_flux_differences(duffing):
    sy, prof = duffing.system, duffing.profile
    A = linearized_coefficient(sy, prof)
    W = np.real(prof.values)
    h = 1e-6
    for j in range(2):
        e = np.zeros((2, 1))
        e[j] = h
        fd = (sy.flux(W + e) - sy.flux(W - e)) / (2 * h)
        assert np.max(np.abs(A[:, j] - fd)) < 1e-6


def test_make_system_by_name():
    assert make_system("rotating_cubic", {"kappa": -1.0}).parameters["kappa"] == -1.0
    with pytest.raises(KeyError):
        make_system("burgers")
    with pytest.raises(ValueError):
        builtin_viscous_psystem(c3=0.0)

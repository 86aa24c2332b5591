import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perwave.numerics import (PeriodicGrid, SpectralField, antiderivative, csv_float, eig_dense,
                              fit_algebraic_decay, fit_exponential_rate, fourier_diff, numeric_rank,
                              periodic_average)


def _field(N, X, fn):
    g = PeriodicGrid(N, X)
    return SpectralField.from_function(g, fn)


def test_derivative_of_sine_is_exact():
    X = 3.0
    f = _field(32, X, lambda x: np.sin(2 * np.pi * x / X))
    d = fourier_diff(f, 1)
    exact = 2 * np.pi / X * np.cos(2 * np.pi * f.grid.nodes / X)
    assert np.max(np.abs(d.values[0] - exact)) < 1e-12


def test_derivative_of_constant_vanishes():
    f = _field(16, 1.0, lambda x: 2.5 + 0 * x)
    assert np.max(np.abs(fourier_diff(f, 1).values)) == pytest.approx(0, abs=1e-14)


def test_second_derivative_converges_under_refinement():
    d128 = fourier_diff(_field(128, 1.0, lambda x: np.exp(np.sin(2 * np.pi * x))), 2)
    d256 = fourier_diff(_field(256, 1.0, lambda x: np.exp(np.sin(2 * np.pi * x))), 2)
    assert np.max(np.abs(d256.values[0, ::2] - d128.values[0])) < 1e-10


def test_antiderivative_inverts_derivative():
    f = _field(64, 2.0, lambda x: np.cos(np.pi * x) + 0.3 * np.sin(3 * np.pi * x))
    back = fourier_diff(antiderivative(f), 1)
    assert np.max(np.abs(back.values - f.values)) < 1e-12


def test_average_of_constant_and_harmonic():
    assert periodic_average(_field(16, 1.0, lambda x: 4.0 + 0 * x))[0] == pytest.approx(4.0)
    assert abs(periodic_average(_field(16, 1.0, lambda x: np.sin(2 * np.pi * x)))[0]) < 1e-14


def test_profile_average_matches_refined_trapezoid(duffing):
    avg = periodic_average(duffing.profile)
    fine = duffing.profile.resample(10 * duffing.num_points)
    trap = np.mean(np.real(fine.values), axis=1)
    assert np.max(np.abs(avg - trap)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 5.0))
def test_derivative_is_linear_and_kills_means(k, X):
    f = _field(32, X, lambda x: np.cos(2 * np.pi * k * x / X) + 1.7)
    d = fourier_diff(f, 1)
    assert abs(periodic_average(d)[0]) < 1e-12
    d2 = fourier_diff(f * 2.0, 1)
    assert np.max(np.abs(d2.values - 2 * d.values)) < 1e-11


def test_eig_dense_diagonal():
    r = eig_dense(np.diag([1.0, 2.0, 3.0]), want_left=True)
    assert np.allclose(np.sort(r.eigenvalues.real), [1, 2, 3])
    assert np.max(r.residual_norms) < 1e-14


def test_eig_dense_flags_defective_block():
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        r = eig_dense(np.array([[0.0, 1.0], [0.0, 0.0]]), want_left=True)
    assert np.max(np.abs(r.eigenvalues)) < 1e-7
    assert r.ill_conditioned


def test_numeric_rank():
    assert numeric_rank(np.eye(5))[0] == 5
    a, b = np.arange(1.0, 5.0), np.array([1.0, -2.0, 0.5])
    assert numeric_rank(np.outer(a, b))[0] == 1


def test_algebraic_fit_power_law_and_constant():
    t = np.geomspace(1, 1000, 80)
    f = fit_algebraic_decay(t, (1 + t) ** -0.5, (10, 1000))
    assert f.exponent == pytest.approx(-0.5, abs=0.01)
    c = fit_algebraic_decay(t, 3.0 + 0 * t, (10, 1000))
    assert c.exponent == pytest.approx(0.0, abs=0.01)
    assert c.boundedness_ratio == pytest.approx(1.0, abs=1e-9)


def test_algebraic_fit_tolerates_oscillation():
    t = np.geomspace(1, 1000, 200)
    f = fit_algebraic_decay(t, (1 + t) ** -0.25 * (1 + 0.1 * np.sin(t)), (10, 1000))
    assert f.exponent == pytest.approx(-0.25, abs=0.03)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(1e-8, 1e3))
def test_exponential_fit_recovers_planted_rate(r, amp):
    t = np.linspace(0, 10, 41)
    assert fit_exponential_rate(t, amp * np.exp(r * t), (1, 10)).exponent == pytest.approx(r, abs=1e-8)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_csv_float_round_trips(v):
    assert float(csv_float(v)) == v

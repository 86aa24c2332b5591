import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from perwave.bloch import (BlochSpectrum, analyze_jordan_at_zero, assemble_L_xi, assemble_adjoint_form,
                           bloch_norm, bloch_transform, default_xi_grid, derivative_coeffs, field_to_coeffs,
                           inverse_bloch_transform, modes, modulo_kernel_angle, spectrum_sweep,
                           stability_verdict)
from perwave.numerics import PeriodicGrid, SpectralField
from perwave.profile import constant_state, speed_variation


def _match(a, b):
    D = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(D)
    return float(D[r, c].max())


@pytest.fixture(scope="module")
def const_wave(psystem):
    return constant_state(psystem, [0.3, 0.1], num_points=16, period=2.5)


@pytest.mark.parametrize("xi", [0.0, 0.37, -1.1])
def test_constant_coefficient_symbol(const_wave, xi):
    N = const_wave.num_points
    lam = np.linalg.eigvals(assemble_L_xi(const_wave, xi, 0.2, N).matrix)
    mu = np.linalg.eigvals(const_wave.system.jacobian(np.array([0.3, 0.1])))
    w = xi + 2 * np.pi * modes(N) / const_wave.period
    exact = np.concatenate([-w ** 2 - 1j * w * m - 0.2 for m in mu])
    assert _match(lam, exact) < 1e-10


def test_duffing_zero_cluster_has_multiplicity_three(waves):
    for N in (128, 256):
        assert waves.jordan("duffing", N).multiplicity == 3


def test_adjoint_form_is_the_conjugate_transpose(duffing):
    L = assemble_L_xi(duffing, 0.0, 0.0, 128).matrix
    A = assemble_adjoint_form(duffing, 128)
    assert np.max(np.abs(L.conj().T - A)) / np.max(np.abs(A)) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([4, 8, 16]), st.sampled_from([8, 16]), st.floats(0.5, 4.0))
def test_parseval_and_round_trip(seed, m, Nc, X):
    rng = np.random.default_rng(seed)
    u = SpectralField(PeriodicGrid(m * Nc, m * X), rng.standard_normal((2, m * Nc)))
    bt = bloch_transform(u, X)
    assert abs(bloch_norm(bt) - u.l2_norm()) / u.l2_norm() < 1e-12
    back = inverse_bloch_transform(bt)
    assert np.max(np.abs(back.values - u.values)) < 1e-12 * np.max(np.abs(u.values))


def test_single_channel_stays_in_its_channel():
    X, m, Nc = 2.0, 8, 16
    g = PeriodicGrid(m * Nc, m * X)
    x = g.nodes
    xi = 2 * np.pi * 3 / (m * X)
    u = SpectralField(g, (np.exp(1j * xi * x) * (1 + 0.5 * np.cos(2 * np.pi * x / X)))[None, :])
    bt = bloch_transform(u, X)
    j = int(np.argmin(np.abs(bt.xis - xi)))
    norms = np.array([np.max(np.abs(c.values)) for c in bt.channels])
    assert np.max(np.delete(norms, j)) < 1e-12 * norms[j]


def test_realness_symmetry(duffing):
    for xi in (0.05, 0.3):
        a = np.linalg.eigvals(assemble_L_xi(duffing, xi, 0.0, 64).matrix)
        b = np.linalg.eigvals(assemble_L_xi(duffing, -xi, 0.0, 64).matrix)
        assert _match(a, np.conj(b)) < 1e-8


def test_constant_spectrum_sweep_matches_symbol(const_wave):
    grid = np.linspace(-np.pi / 2.5, np.pi / 2.5, 9)
    sp = spectrum_sweep(const_wave, grid, N=16, num_branches_tracked=4)
    mu = np.linalg.eigvals(const_wave.system.jacobian(np.array([0.3, 0.1])))
    for i, xi in enumerate(grid):
        w = xi + 2 * np.pi * modes(16) / 2.5
        exact = np.concatenate([-w ** 2 - 1j * w * m for m in mu])
        assert np.min(np.abs(exact[:, None] - sp.surfaces[i][None, :]), axis=0).max() < 1e-10


def test_duffing_spectrum_critical_branches_and_gap(waves, duffing):
    sp = waves.spectrum("duffing")
    i0 = int(np.flatnonzero(sp.xi_grid == 0.0)[0])
    assert len(sp.critical) == 3
    assert np.max(np.abs(sp.surfaces[i0, sp.critical])) < 1e-6
    coarse = spectrum_sweep(duffing, default_xi_grid(duffing.period, 11, 1, 1), N=64)
    assert abs(coarse.gap - sp.gap) / sp.gap < 0.01


def test_duffing_zero_eigenvalue_is_semisimple(waves, duffing):
    J = waves.jordan("duffing", 128)
    assert J.kernel_dim == 3 and J.chain_heights == []
    du = derivative_coeffs(duffing, 128)
    L0 = assemble_L_xi(duffing, 0.0, 0.0, 128).matrix
    assert np.linalg.norm(L0 @ du) / np.linalg.norm(du) < 1e-8
    assert J.residuals["constants_in_left_kernel"] < 1e-8


def test_rotating_cubic_has_one_height_two_chain(waves):
    J = waves.jordan("cubic", 256)
    assert J.kernel_dim == 2 and J.chain_heights == [2] and J.multiplicity == 3
    assert J.angle_to_derivative < 1e-4
    assert J.residuals["constants_in_left_kernel"] < 1e-8
    assert J.residuals["left_kernel_in_constants"] < 1e-8
    N = 256
    L0 = assemble_L_xi(waves.cubic, 0.0, 0.0, N).matrix
    g = field_to_coeffs(J.generalized_vector, N)
    du = derivative_coeffs(waves.cubic, N)
    assert np.linalg.norm(L0 @ g - du) / np.linalg.norm(g) < 1e-6
    # the chain vector is minus the speed derivative of the family, up to kernel elements
    assert modulo_kernel_angle(J, speed_variation(waves.cubic), J.generalized_vector) < 1e-3


def test_constant_state_fails_the_multiplicity_condition(const_wave):
    sp = spectrum_sweep(const_wave, default_xi_grid(const_wave.period, 11, 1, 1), N=16, num_branches_tracked=4)
    J = analyze_jordan_at_zero(const_wave, 16)
    assert stability_verdict(sp, J, 2).D3prime.status == "fail"


def test_planted_unstable_branch_fails_D1():
    xs = np.linspace(-1, 1, 21)
    S = np.stack([-xs ** 2 + 0j, -xs ** 2 - 1 + 0j], axis=1)
    S[15, 1] = 1e-3
    sp = BlochSpectrum(xs, S, ["b0", "b1"], np.zeros(S.shape), [0], 2 * np.pi)
    v = stability_verdict(sp, None, 0, xi_fit=0.05)
    assert v.D1.status == "fail"
    assert v.D1.witness["max_re"] == pytest.approx(1e-3)
    assert v.D1.witness["argmax_xi"] == pytest.approx(xs[15])
    assert not v.overall

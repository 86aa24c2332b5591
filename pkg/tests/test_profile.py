import numpy as np
import pytest

from perwave.bloch import assemble_L_xi, derivative_coeffs, field_to_coeffs
from perwave.errors import ProfileError
from perwave.model import builtin_viscous_psystem
from perwave.numerics import PeriodicGrid, SpectralField
from perwave.profile import (cached_profile, check_H2_rank, constant_state, continue_family, duffing_profile,
                             load_profile, orbit_guess, profile_residual, refine_profile, save_profile,
                             solve_profile_bvp, speed_variation)


def _period_oracle(a, nodes=400):
    # u = a sin(theta) removes the turning-point singularity; the integrand is then
    # smooth and pi-periodic, so the trapezoid rule converges geometrically
    th = np.linspace(-np.pi / 2, np.pi / 2, nodes, endpoint=False)
    return 2 * np.pi * np.mean(1.0 / np.sqrt(1 - a * a * (1 + np.sin(th) ** 2) / 2))


def test_period_oracle_converged():
    assert abs(_period_oracle(0.8, 400) - _period_oracle(0.8, 800)) < 1e-13


def test_duffing_period_matches_quadrature(duffing):
    assert duffing.residual < 1e-9
    assert abs(duffing.period - _period_oracle(0.5)) < 1e-8


@pytest.mark.parametrize("a", [0.2, 0.8])
def test_duffing_family_periods(psystem, a):
    sol = duffing_profile(psystem, a, num_points=128)
    assert abs(sol.period - _period_oracle(a)) < 1e-8


def test_harmonic_limit(psystem):
    sol = duffing_profile(psystem, 1e-3, num_points=64)
    assert abs(sol.period - 2 * np.pi) < 1e-3


def test_residual_is_independent_of_the_solver(duffing):
    assert profile_residual(duffing.system, duffing.profile, duffing.speed, duffing.flux_constant) < 1e-9


def test_phase_condition_puts_the_maximum_at_zero(duffing):
    u = np.real(duffing.profile.values[0])
    assert np.argmax(u) == 0
    assert abs(np.real(duffing.derivative.values[0, 0])) < 1e-10


def test_constant_guess_is_rejected(psystem):
    g = SpectralField(PeriodicGrid(32, 6.0), np.tile([[0.2], [0.0]], (1, 32)))
    with pytest.raises(ProfileError, match="constant state"):
        solve_profile_bvp(psystem, g, 0.0, [0.0, 0.0])


def test_orbit_guess_feeds_the_solver():
    from perwave.model import rotating_cubic_system
    sy = rotating_cubic_system(-1.0, 2.0, 1.0)
    g = orbit_guess(sy, [0.7, 0.0], -0.5, [0.0, 0.0], 128)
    sol = solve_profile_bvp(sy, g, -0.5, [0.0, 0.0])
    assert sol.residual < 1e-9 and sol.period > 0


def test_refinement_preserves_the_wave(duffing):
    fine = refine_profile(duffing, 256)
    assert fine.residual < 1e-9
    assert abs(fine.period - duffing.period) < 1e-10


def test_one_step_in_q2(duffing):
    fam = continue_family(duffing, ("q2",), 1, 1e-3, h_s=None)
    assert len(fam.members) == 3
    for m in fam.members:
        assert m.residual < 1e-9
        assert abs(m.period - duffing.period) < 0.1


def test_zero_steps_give_the_base_only(duffing):
    fam = continue_family(duffing, ("q1",), 0)
    assert fam.members == (duffing,)
    assert fam.speed_variation is None


def test_speed_variation_generates_the_chain(waves):
    cubic = waves.cubic
    N = cubic.num_points
    fs = speed_variation(cubic)
    L0 = assemble_L_xi(cubic, 0.0, 0.0, N).matrix
    du = derivative_coeffs(cubic, N)
    J = waves.jordan("cubic", N)
    # f* is defined modulo the kernel: remove the kernel component of the residual
    r = L0 @ field_to_coeffs(fs, N) - du
    Q, _ = np.linalg.qr(np.stack([field_to_coeffs(f, N) for f in J.right_kernel_basis], axis=1))
    r -= Q @ (Q.conj().T @ r)
    assert np.linalg.norm(r) / np.linalg.norm(du) < 1e-4


def test_H2_rank_and_variational_jacobian(duffing):
    rep = check_H2_rank(duffing)
    assert rep.rank == 2
    assert rep.fd_agreement < 1e-5


def test_H2_period_column_is_the_endpoint_derivative(duffing):
    rep = check_H2_rank(duffing)
    col = rep.jacobian[:, rep.columns.index("X")]
    du0 = np.real(duffing.derivative.values[:, 0])
    assert np.max(np.abs(col - du0)) < 1e-8


def test_H2_rejects_constant_state(psystem):
    with pytest.raises(ProfileError, match="constant state"):
        check_H2_rank(constant_state(psystem, [0.2, 0.0], num_points=32))


def test_cache_round_trip_is_exact(duffing, tmp_path):
    path = save_profile(duffing, tmp_path)
    back = load_profile(path)
    assert np.array_equal(back.profile.values, duffing.profile.values)
    assert back.period == duffing.period


def test_cache_hit_skips_the_builder(duffing, tmp_path):
    calls = []

    def build():
        calls.append(1)
        return duffing

    a = cached_profile(tmp_path, {"k": 1}, build)
    b = cached_profile(tmp_path, {"k": 1}, build)
    assert len(calls) == 1
    assert np.array_equal(a.profile.values, b.profile.values)

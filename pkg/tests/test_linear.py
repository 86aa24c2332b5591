import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perwave.errors import GateError
from perwave.linear import (apply_semigroup, comoving_derivative_profile, derivative_envelope,
                            frequency_cutoff, green_column, high_frequency_decay, periodized_gaussian,
                            smooth_step, smooth_step_derivative, split_low_high, time_cutoff,
                            time_stepper_reference, verify_cancellation, verify_green_decay)
from perwave.numerics import SpectralField


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 3))
def test_smooth_step_is_a_partition(r):
    v = smooth_step(r)
    assert 0.0 <= v <= 1.0
    assert v + smooth_step(1 - r) == pytest.approx(1.0, abs=1e-15)


def test_smooth_step_plateaus_and_derivative():
    assert smooth_step(-0.1) == 0.0 and smooth_step(1.0) == 1.0
    r = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (smooth_step(r + h) - smooth_step(r - h)) / (2 * h)
    assert np.max(np.abs(fd - smooth_step_derivative(r))) < 1e-7


def test_cutoff_plateaus():
    assert frequency_cutoff(0.05, 0.1) == 1.0 and frequency_cutoff(0.2, 0.1) == 0.0
    assert time_cutoff(1.0) == 0.0 and time_cutoff(2.0) == 1.0


def _bumps(dom):
    x, L = dom.nodes, dom.period
    return SpectralField(dom, np.stack([np.exp(-((x - L / 2) / 20) ** 2), 0.5 * np.exp(-((x - L / 3) / 15) ** 2)]))


def test_identity_at_time_zero(small_sampler):
    u0 = _bumps(small_sampler.domain)
    assert (apply_semigroup(small_sampler, u0, 0.0) - u0).sup_norm() < 1e-12 * u0.sup_norm()


def test_translation_mode_is_stationary(small_sampler):
    du = comoving_derivative_profile(small_sampler)
    for t in (0.5, 5.0):
        assert (apply_semigroup(small_sampler, du, t) - du).sup_norm() < 1e-8 * du.sup_norm()


def test_agrees_with_time_stepper(small_sampler):
    u0 = _bumps(small_sampler.domain)
    a = apply_semigroup(small_sampler, u0, 1.0)
    b = time_stepper_reference(small_sampler, u0, 1.0)
    assert (a - b).l2_norm() / b.l2_norm() < 1e-6


def test_splitting_is_additive(small_sampler):
    u0 = _bumps(small_sampler.domain)
    lo, hi = split_low_high(small_sampler, u0, 2.0)
    tot = apply_semigroup(small_sampler, u0, 2.0)
    assert (lo + hi - tot).sup_norm() < 1e-10 * tot.sup_norm()


def test_green_mass_conserved_and_e_vanishes_early(small_sampler):
    dx = small_sampler.domain.spacing
    masses = []
    for t in (0.5, 3.0, 10.0):
        g = green_column(small_sampler, 100, t)
        masses.append(np.real(g.G_column.values).sum(axis=1) * dx)
        if t < 1:
            assert np.max(np.abs(g.e_column.values)) == 0.0
    masses = np.array(masses)
    assert np.max(np.abs(masses - masses[0])) < 1e-8
    assert masses[0] == pytest.approx([1.0, 0.0], abs=1e-12)


@pytest.mark.parametrize("t", [1.0, 10.0])
def test_heat_kernel_is_a_periodized_gaussian(heat_sampler, t):
    g = green_column(heat_sampler, 0, t)
    ref = periodized_gaussian(heat_sampler.domain.nodes, t, heat_sampler.domain.period)
    assert np.max(np.abs(g.G_column.values[0] - ref)) < 1e-8


def test_heat_decay_exponent(heat_sampler):
    rep = verify_green_decay(heat_sampler, np.geomspace(10, 300, 12), (2.0,), derivatives=False)
    assert rep.fits["G_tilde_L2.0"].exponent == pytest.approx(-0.25, abs=0.02)


def test_gated_checks_refuse_unstable_wave(small_sampler):
    u0 = _bumps(small_sampler.domain)
    with pytest.raises(GateError, match="not applicable"):
        verify_green_decay(small_sampler, np.geomspace(10, 100, 8))
    with pytest.raises(GateError, match="not applicable"):
        high_frequency_decay(small_sampler, u0, np.linspace(0.5, 5, 8))


def test_derivative_envelope_is_finite(heat_sampler):
    dom = heat_sampler.domain
    u0 = SpectralField(dom, np.exp(-((dom.nodes - dom.period / 2) / 5) ** 2)[None, :])
    C, ratios = derivative_envelope(heat_sampler, u0, np.geomspace(0.01, 5, 12), 0.0)
    assert np.isfinite(C) and C == pytest.approx(np.max(ratios))


def test_cancellation_identity(small_sampler):
    dom = small_sampler.domain
    g = _bumps(dom)
    du = comoving_derivative_profile(small_sampler)
    assert verify_cancellation(small_sampler, lambda s: g * s, lambda s: g).residual < 1e-6
    r = verify_cancellation(small_sampler, lambda s: du * (1 - np.exp(-s)), lambda s: du * np.exp(-s))
    assert r.residual < 1e-6


def test_cancellation_of_zero_field(small_sampler):
    z = _bumps(small_sampler.domain) * 0.0
    rep = verify_cancellation(small_sampler, lambda s: z, lambda s: z, nodes=8)
    assert np.max(np.abs(rep.lhs.values)) == 0.0

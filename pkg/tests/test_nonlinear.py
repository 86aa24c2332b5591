import json

import numpy as np
import pytest

from perwave.bloch import StabilityVerdict, Verdict, analyze_jordan_at_zero
from perwave.errors import ConfigError, ExtractionError, GateError
from perwave.linear import make_sampler
from perwave.nonlinear import (ModulationDecomposition, compose_shift, Perturbation, SimConfig, damping_norm_track,
                               evolve_pde, extract_modulation, extract_psi, initial_data, psi_via_e_kernel,
                               quadratic_order_ratio, reconstruction_error, residual_identity_check,
                               tiled_profile, verify_theorem_rates, zeta_scaling)
from perwave.numerics import PeriodicGrid, SpectralField

M = 16  # periods on the test domain


@pytest.fixture(scope="module")
def base(duffing64):
    return tiled_profile(duffing64, 64, M)


def _shifted(base, shift):
    x = base.grid.nodes
    return SpectralField(base.grid, np.real(base.evaluate(x - shift)))


@pytest.mark.parametrize("scheme", ["exponential-integrator", "implicit-explicit"])
def test_equilibrium_is_a_fixed_point(duffing64, base, scheme):
    cfg = SimConfig(duffing64, M, 64, 0.01, scheme=scheme, horizon=10.0, perturbation=Perturbation(amplitude=0.0))
    tr = evolve_pde(cfg, base)
    assert np.max(np.abs(tr.states - base.values[None])) < 1e-9
    assert np.max(np.abs(tr.mass - tr.mass[0])) < 1e-12


def test_translate_stays_put(duffing64, base):
    sh = _shifted(base, 0.3)
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=10.0, perturbation=Perturbation(amplitude=0.0))
    tr = evolve_pde(cfg, sh)
    assert np.max(np.abs(tr.states - sh.values[None])) < 1e-9


def test_mass_is_conserved_for_a_perturbed_run(duffing64):
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=5.0, perturbation=Perturbation(amplitude=1e-3))
    tr = evolve_pde(cfg)
    assert np.max(np.abs(tr.mass - tr.mass[0])) < 1e-12
    assert tr.tail_mass.shape == tr.times.shape


def test_large_perturbation_rejected(duffing64):
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=1.0, perturbation=Perturbation(amplitude=1.0))
    with pytest.raises(ValueError, match="too large"):
        initial_data(cfg)


def test_explicit_diffusion_cfl_is_enforced(duffing64):
    with pytest.raises(ConfigError):
        SimConfig(duffing64, M, 64, 0.5, scheme="implicit-explicit")


def test_runs_are_deterministic_and_saved(duffing64, tmp_path):
    cfg = SimConfig(duffing64, 4, 32, 0.02, horizon=1.0, perturbation=Perturbation(amplitude=1e-3))
    a = evolve_pde(cfg).save(tmp_path / "a")
    b = evolve_pde(cfg).save(tmp_path / "b")
    for f in sorted(a.glob("snapshot_*.csv")):
        assert f.read_bytes() == (b / f.name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert len(man["config_hash"]) == 64 and len(man["times"]) == len(list(a.glob("snapshot_*.csv")))


def test_pure_translate_is_recovered(duffing64, base):
    psi = extract_psi(_shifted(base, 0.1), duffing64, 64)
    assert np.max(np.abs(psi - 0.1)) < 1e-8


def test_pure_translate_leaves_no_remainder(duffing64, base):
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=0.5, snapshot_every=0.5,
                    perturbation=Perturbation(amplitude=0.0))
    dec = extract_modulation(evolve_pde(cfg, _shifted(base, 0.1)), duffing64)
    assert np.max(np.abs(dec.psi - 0.1)) < 1e-8
    assert np.max(np.abs(dec.v)) < 1e-8


def test_no_spurious_phase_from_amplitude_perturbation(duffing64, base):
    # u-bar itself is orthogonal to u-bar' over every period
    psi = extract_psi(base + base * 1e-4, duffing64, 64)
    assert np.max(np.abs(psi)) < 1e-5


def test_manufactured_phase(duffing64, base):
    x = base.grid.nodes
    ps = 0.05 * np.sin(2 * np.pi * x / base.grid.period)
    man = SpectralField(base.grid, np.real(base.evaluate(x - ps)))
    psi = extract_psi(man, duffing64, 64)
    assert np.max(np.abs(psi - ps)) < 0.02 * 0.05


def test_flat_field_is_ambiguous(duffing64):
    g = PeriodicGrid(64 * M, M * duffing64.period)
    with pytest.raises(ExtractionError):
        extract_psi(SpectralField(g, np.zeros((2, g.num_points))), duffing64, 64)


def test_reconstruction(duffing64, base):
    x = base.grid.nodes
    L = base.grid.period
    u = SpectralField(base.grid, np.real(base.evaluate(x - 0.03 * np.sin(2 * np.pi * x / L))))
    ps = 0.02 * np.cos(2 * np.pi * x / L)
    v = np.real(compose_shift(u, ps).values) - np.real(base.values)
    assert reconstruction_error(u, base, ps, v) < 1e-10


def _ub(sol):
    return lambda x: np.real(sol.profile.evaluate(x))


def test_identity_without_modulation(duffing):
    ub = _ub(duffing)
    L = 4 * duffing.period
    rep = residual_identity_check(duffing, lambda x, t: ub(x) + 0.01 * np.cos(2 * np.pi * x / L) * (1 + t),
                                  lambda x, t: 0 * x, 0.5, 4, 64)
    assert rep.lemma_absolute < 1e-12 * max(1.0, rep.scale)


def test_identity_for_steady_translate(duffing):
    ub = _ub(duffing)
    rep = residual_identity_check(duffing, lambda x, t: ub(x - 0.2), lambda x, t: 0 * x + 0.2, 0.5, 4, 64)
    assert rep.lemma_absolute < 1e-10 and rep.corollary_absolute < 1e-10


def test_identity_for_manufactured_modulation(duffing):
    ub = _ub(duffing)
    ubx = lambda x: np.real(duffing.derivative.evaluate(x))
    L = 4 * duffing.period
    rep = residual_identity_check(duffing, lambda x, t: ub(x) + 0.01 * np.cos(2 * np.pi * x / L) * ubx(x),
                                  lambda x, t: 0.01 * np.sin(2 * np.pi * x / L) * np.exp(-t), 0.5, 4, 64)
    assert rep.lemma_mismatch < 1e-8 and rep.corollary_mismatch < 1e-8


def test_quadratic_sources_scale_quadratically(duffing):
    v = 1e-2 * np.random.default_rng(0).standard_normal((2, 4 * 64))
    assert quadratic_order_ratio(duffing, v, 64, 4) == pytest.approx(0.25, abs=0.02)


def test_kernel_phase_vanishes_early_and_for_zero_data(duffing64):
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=3.0, perturbation=Perturbation(amplitude=0.0))
    tr = evolve_pde(cfg)
    dec = extract_modulation(tr)
    S = make_sampler(duffing64, M, 64, analyze_jordan_at_zero(duffing64, 64))
    res = psi_via_e_kernel(S, tr, dec)
    assert np.max(np.abs(res.psi[tr.times <= 1.0])) == 0.0
    # the equilibrium run drifts at roundoff level only, so psi does too
    assert np.max(np.abs(res.psi)) < 1e-14
    cfg = SimConfig(duffing64, M, 64, 0.02, horizon=1.5, perturbation=Perturbation(amplitude=1e-4, mix=(1.0, 0.5)))
    tr = evolve_pde(cfg)
    res = psi_via_e_kernel(S, tr, extract_modulation(tr), max_iter=1)
    assert np.max(np.abs(res.psi[tr.times <= 1.0])) == 0.0


def _planted(times, g):
    s4, s2 = (1 + times) ** -0.25, (1 + times) ** -0.5
    ns = {"v_L2": s4, "v_Linf": s2, "v_HK": s4, "psi_tx_L2": s4, "psi_tx_Linf": s2,
          "psi_Linf": 0.3 + 0 * times}
    z = np.zeros((times.size, g.num_points))
    return ModulationDecomposition(times, g, z, np.zeros((times.size, 1, g.num_points)), z, z, ns,
                                   0.1 + 0 * times, 4, ())


def test_planted_rates_recovered():
    t = np.geomspace(1, 1000, 120)
    tab = verify_theorem_rates(_planted(t, PeriodicGrid(8, 1.0)), (10, 1000))
    assert tab.all_passed
    for k, want in (("v_L2", -0.25), ("v_Linf", -0.5), ("psi_tx_Linf", -0.5)):
        assert tab.fits[k].exponent == pytest.approx(want, abs=0.02)
    assert tab.psi_boundedness <= 2.0


def test_rates_refuse_failed_gate():
    t = np.geomspace(1, 100, 40)
    bad = Verdict("fail", {})
    v = StabilityVerdict(bad, bad, bad, bad)
    with pytest.raises(GateError, match="not applicable"):
        verify_theorem_rates(_planted(t, PeriodicGrid(8, 1.0)), verdict=v)


def test_zeta_scaling_of_planted_runs():
    t = np.geomspace(1, 100, 40)
    full = _planted(t, PeriodicGrid(8, 1.0))
    half = ModulationDecomposition(**{**full.__dict__, "zeta_series": 0.05 + 0 * t})
    ratio, ok = zeta_scaling(full, half)
    assert ratio == pytest.approx(0.5) and ok


def test_damping_of_pure_decay():
    t = np.linspace(0, 10, 201)
    rep = damping_norm_track(t, np.exp(-t), 0 * t)
    assert rep.C == pytest.approx(1.0, abs=1e-9)
    assert rep.theta1 == pytest.approx(1.0, abs=1e-6)
    assert rep.holds


def test_damping_of_zero_run_is_degenerate():
    t = np.linspace(0, 10, 21)
    rep = damping_norm_track(t, 0 * t, 0 * t)
    assert rep.degenerate and rep.margin == np.inf

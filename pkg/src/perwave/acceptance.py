"""Acceptance checks, one function per numbered criterion.

Checks 1-13 always run. Checks 14-16 need a spectrally stable wave; when no
candidate passes the gate they are reported as skipped and check 13 (the
small-amplitude growth match) stands in for them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bloch import (analyze_jordan_at_zero, assemble_L_xi, bloch_norm, bloch_transform, derivative_coeffs,
                    field_to_coeffs, inverse_bloch_transform, modulo_kernel_angle, spectrum_sweep,
                    stability_verdict)
from .errors import ContinuationError, GateError
from .linear import (apply_semigroup, comoving_derivative_profile, derivative_envelope, green_column,
                     high_frequency_decay, high_frequency_gap, make_sampler, periodized_gaussian, split_low_high,
                     time_stepper_reference, verify_cancellation, verify_green_decay)
from .lowfreq import (ladder_consistency, reduced_matrices, rescale_and_extract, speed_agreement,
                      whitham_characteristics)
from .model import builtin_viscous_psystem, linear_system, rotating_cubic_system
from .nonlinear import (Perturbation, SimConfig, evolve_pde, extract_modulation, linear_regime_check,
                        residual_identity_check, verify_theorem_rates, zeta_scaling)
from .numerics import PeriodicGrid, SpectralField, fit_algebraic_decay, fit_exponential_rate, fourier_diff
from .profile import (check_H2_rank, constant_state, continue_family, duffing_period, duffing_profile,
                      orbit_guess, refine_profile, solve_profile_bvp, speed_variation)


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool | None            # None: skipped
    measured: dict
    thresholds: dict
    detail: str = ""
    gated: bool = False
    seconds: float = 0.0
    supplementary: list = field(default_factory=list)

    @property
    def status(self) -> str:
        return "SKIP" if self.passed is None else ("PASS" if self.passed else "FAIL")

    def line(self) -> str:
        meas = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{self.status}] {self.number:2d}. {self.title}: {meas}" + (f" ({self.detail})" if self.detail else "")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


class Waves:
    """Reference waves shared by the checks (built lazily, cached per instance)."""

    duffing_amplitude = 0.5
    cubic_params = dict(kappa=-1.0, beta=2.0, gamma=1.0)
    cubic_speed = -0.5

    @cached_property
    def duffing(self):
        return duffing_profile(builtin_viscous_psystem(), self.duffing_amplitude, num_points=128)

    @cached_property
    def duffing_256(self):
        return refine_profile(self.duffing, 256)

    @cached_property
    def duffing_64(self):
        return refine_profile(self.duffing, 64)

    @cached_property
    def cubic(self):
        sy = rotating_cubic_system(**self.cubic_params)
        g = orbit_guess(sy, [0.7, 0.0], self.cubic_speed, [0.0, 0.0], 128, t_max=400, direction=1)
        return refine_profile(solve_profile_bvp(sy, g, self.cubic_speed, [0.0, 0.0]), 256)

    @cached_property
    def cubic_512(self):
        return refine_profile(self.cubic, 512)

    def jordan(self, name: str, N: int):
        key = f"_jordan_{name}_{N}"
        if not hasattr(self, key):
            prof = {("duffing", 128): self.duffing, ("duffing", 256): self.duffing_256,
                    ("duffing", 64): self.duffing_64, ("cubic", 256): self.cubic,
                    ("cubic", 512): self.cubic_512}[(name, N)]
            setattr(self, key, analyze_jordan_at_zero(prof, N))
        return getattr(self, key)

    def profile(self, name: str):
        return self.duffing if name == "duffing" else self.cubic

    def directions(self, name: str):
        return ("amplitude", "q1", "q2") if name == "duffing" else ("s", "q1", "q2")

    @cached_property
    def duffing_sampler(self):
        return make_sampler(self.duffing_64, 64, 64, self.jordan("duffing", 64))

    def spectrum(self, name: str):
        key = f"_spectrum_{name}"
        if not hasattr(self, key):
            prof = self.profile(name)
            setattr(self, key, spectrum_sweep(prof, N=prof.num_points))
        return getattr(self, key)

    def verdict(self, name: str):
        prof = self.profile(name)
        return stability_verdict(self.spectrum(name), self.jordan(name, prof.num_points), prof.n)

    def pencil(self, name: str):
        key = f"_pencil_{name}"
        if not hasattr(self, key):
            prof = self.profile(name)
            J = self.jordan(name, prof.num_points)
            pen = reduced_matrices(prof, J)
            setattr(self, key, (pen, rescale_and_extract(pen)))
        return getattr(self, key)


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        r = fn(*a, **kw)
        r.seconds = time.perf_counter() - t0
        return r
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# --- ungated checks ------------------------------------------------------------------------

@_timed
def check_parseval(w: Waves, count: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    X, m, Nc = 2.0, 64, 32
    g = PeriodicGrid(m * Nc, m * X)
    worst_norm = worst_round = 0.0
    for _ in range(count):
        u = SpectralField(g, rng.standard_normal((2, g.num_points)))
        bt = bloch_transform(u, X)
        worst_norm = max(worst_norm, abs(bloch_norm(bt) - u.l2_norm()) / u.l2_norm())
        back = inverse_bloch_transform(bt)
        worst_round = max(worst_round, float(np.max(np.abs(back.values - u.values)) / np.max(np.abs(u.values))))
    ok = worst_norm < 1e-12 and worst_round < 1e-12
    return CheckResult(1, "Bloch isometry", ok, {"norm_rel_err": worst_norm, "roundtrip": worst_round},
                       {"rel_err": 1e-12})


@_timed
def check_profile(w: Waves) -> CheckResult:
    p = w.duffing
    ref = duffing_period(w.duffing_amplitude)
    small = duffing_profile(builtin_viscous_psystem(), 1e-3, num_points=64)
    m = {"residual": p.residual, "period_err": abs(p.period - ref), "harmonic_err": abs(small.period - 2 * np.pi)}
    ok = m["residual"] < 1e-9 and m["period_err"] < 1e-8 and m["harmonic_err"] < 1e-3
    return CheckResult(2, "profile residual and period", ok, m, {"residual": 1e-9, "period": 1e-8, "harmonic": 1e-3})


@_timed
def check_H2(w: Waves) -> CheckResult:
    rep = check_H2_rank(w.duffing)
    ok = rep.rank == w.duffing.n and rep.fd_agreement < 1e-5
    return CheckResult(3, "H2 rank", ok, {"rank": rep.rank, "fd_agreement": rep.fd_agreement},
                       {"rank": w.duffing.n, "fd": 1e-5})


def _jordan_measure(w: Waves, name: str, N: int) -> dict:
    prof = w.profile(name)
    J = w.jordan(name, N)
    J2 = w.jordan(name, 2 * N)
    m = {"kernel_dim": J.kernel_dim, "chains": list(J.chain_heights), "multiplicity": J.multiplicity,
         "multiplicity_2N": J2.multiplicity, "L0_du": J.residuals["L0_derivative"],
         "left_in_constants": J.residuals["left_kernel_in_constants"],
         "constants_in_left": J.residuals["constants_in_left_kernel"]}
    try:
        fs = speed_variation(prof)
        L0 = assemble_L_xi(prof, 0.0, 0.0, N).matrix
        du = derivative_coeffs(prof, N)
        m["L0_fstar"] = float(np.linalg.norm(L0 @ field_to_coeffs(fs, N) - du) / np.linalg.norm(du))
        if J.generalized_vector is not None:
            m["fstar_angle_mod_kernel"] = modulo_kernel_angle(J, fs, J.generalized_vector)
    except ContinuationError:
        m["L0_fstar"] = float("nan")
    n = prof.n
    m["pass"] = bool(J.kernel_dim == n and J.chain_heights == [2] and J.multiplicity == n + 1
                     and J2.multiplicity == n + 1 and m["L0_du"] < 1e-8 and m["left_in_constants"] < 1e-8
                     and m["constants_in_left"] < 1e-8 and m["L0_fstar"] < 1e-4)
    return m


@_timed
def check_jordan(w: Waves) -> CheckResult:
    """Runs on the Duffing base wave; the rotating-cubic wave is reported alongside."""
    d = _jordan_measure(w, "duffing", 128)
    c = _jordan_measure(w, "cubic", 256)
    ok = d.pop("pass")
    cp = c.pop("pass")
    detail = "" if ok else "Duffing zero eigenvalue is semisimple (speed pinned at 0, no speed variation)"
    return CheckResult(4, "Jordan structure at xi = 0 (Duffing)", ok, d,
                       {"kernel_dim": 2, "chains": [2], "multiplicity": 3, "L0_du": 1e-8, "left": 1e-8,
                        "L0_fstar": 1e-4}, detail,
                       supplementary=[("rotating cubic, N = 256", cp, c)])


def _structure_measure(w: Waves, name: str) -> dict:
    pen, _ = w.pencil(name)
    s = pen.structure[1]
    return {"M0_pattern": s["M0_pattern"], "M1_zeros": s["M1_zeros"], "M0_nilpotency": s["M0_nilpotency"]}


@_timed
def check_structure(w: Waves) -> CheckResult:
    d = _structure_measure(w, "duffing")
    c = _structure_measure(w, "cubic")
    worst = max(max(d.values()), max(c.values()))
    m = {f"duffing_{k}": v for k, v in d.items()} | {f"cubic_{k}": v for k, v in c.items()}
    return CheckResult(5, "reduced-matrix structural zeros", bool(worst < 1e-6), m, {"zeros": 1e-6, "nilpotency": 1e-6})


@_timed
def check_rescaled(w: Waves) -> CheckResult:
    m = {}
    ok = True
    for name in ("duffing", "cubic"):
        pen, rp = w.pencil(name)
        lc = ladder_consistency(w.profile(name), pen)
        cc = max(rp.richardson_cauchy.values())
        lv = max(rp.limit_vs_check.values())
        m |= {f"{name}_cauchy": cc, f"{name}_limit_vs_check": lv, f"{name}_ladder": lc}
        ok &= cc < 1e-4 and lv < 1e-4 and lc < 1e-8
    return CheckResult(6, "rescaled pencil limits", bool(ok), m, {"cauchy": 1e-4, "check": 1e-4, "ladder": 1e-8})


@_timed
def check_whitham(w: Waves, step: float = 1e-3) -> CheckResult:
    m = {}
    ok = True
    for name in ("duffing", "cubic"):
        prof = w.profile(name)
        _, rp = w.pencil(name)
        dirs = w.directions(name)
        a1 = speed_agreement(rp.a_coeffs[1], whitham_characteristics(continue_family(prof, dirs, 1, step, h_s=None))
                             .comoving_speeds)
        a2 = speed_agreement(rp.a_coeffs[1], whitham_characteristics(
            continue_family(prof, dirs, 1, step / 2, h_s=None)).comoving_speeds)
        m |= {f"{name}_agreement": a1, f"{name}_half_step": a2}
        ok &= a1 < 1e-2 and a2 < a1
    return CheckResult(7, "Whitham characteristic speeds", bool(ok), m, {"relative": 1e-2, "improves": True})


@_timed
def check_cancellation(w: Waves) -> CheckResult:
    S = w.duffing_sampler
    dom = S.domain
    x, L = dom.nodes, dom.period
    g = SpectralField(dom, np.stack([np.exp(-((x - L / 2) / 20) ** 2), 0.5 * np.exp(-((x - L / 3) / 15) ** 2)]))
    du = comoving_derivative_profile(S)
    r1 = verify_cancellation(S, lambda s: g * s, lambda s: g, 1.0).residual
    r2 = verify_cancellation(S, lambda s: du * (1 - np.exp(-s)), lambda s: du * np.exp(-s), 1.0).residual
    return CheckResult(8, "cancellation identity", bool(max(r1, r2) < 1e-6), {"s_g": r1, "decaying_du": r2},
                       {"residual": 1e-6})


@_timed
def check_modulated_identity(w: Waves, periods: int = 4) -> CheckResult:
    prof = w.duffing
    L = periods * prof.period

    def ut(x, t):
        return np.real(prof.profile.evaluate(x)) + 0.01 * np.cos(2 * np.pi * x / L) * np.real(prof.derivative.evaluate(x))

    def ps(x, t):
        return 0.01 * np.sin(2 * np.pi * x / L) * np.exp(-t)

    fine = residual_identity_check(prof, ut, ps, 0.5, periods, 64)
    c1 = residual_identity_check(prof, ut, ps, 0.5, periods, 16)
    c2 = residual_identity_check(prof, ut, ps, 0.5, periods, 32)
    ratio = c1.lemma_mismatch / max(c2.lemma_mismatch, 1e-300)
    m = {"mismatch_N256": fine.lemma_mismatch, "corollary_N256": fine.corollary_mismatch,
         "mismatch_N64": c1.lemma_mismatch, "mismatch_N128": c2.lemma_mismatch, "ratio": ratio}
    ok = fine.lemma_mismatch < 1e-8 and fine.corollary_mismatch < 1e-8 and ratio >= 100
    return CheckResult(9, "modulated perturbation identity", bool(ok), m, {"mismatch": 1e-8, "ratio": 100})


@_timed
def check_splitting(w: Waves) -> CheckResult:
    S = w.duffing_sampler
    dom = S.domain
    x, L = dom.nodes, dom.period
    u0 = SpectralField(dom, np.stack([np.exp(-((x - L / 2) / 20) ** 2), 0.5 * np.exp(-((x - L / 3) / 15) ** 2)]))
    lo, hi = split_low_high(S, u0, 1.0)
    tot = apply_semigroup(S, u0, 1.0)
    add = (lo + hi - tot).sup_norm() / tot.sup_norm()
    ref = time_stepper_reference(S, u0, 1.0)
    ts = (tot - ref).sup_norm() / ref.sup_norm()
    return CheckResult(10, "splitting additivity and time stepper", bool(add < 1e-10 and ts < 1e-6),
                       {"additivity": add, "time_stepper": ts}, {"additivity": 1e-10, "stepper": 1e-6})


@_timed
def check_heat(w: Waves) -> CheckResult:
    base = constant_state(linear_system([[0.0]]), [0.0], num_points=32, period=2 * np.pi)
    S = make_sampler(base, 64, 32)
    worst = 0.0
    for t in (1.0, 10.0, 100.0):
        for y in (0, 777):
            gs = green_column(S, y, t)
            ref = periodized_gaussian(S.domain.nodes, t, S.domain.period, S.domain.nodes[y])
            worst = max(worst, float(np.max(np.abs(gs.G_column.values[0] - ref))))
    rep = verify_green_decay(S, np.geomspace(10, 300, 12), (2.0,))
    e = rep.fits["G_tilde_L2.0"].exponent
    return CheckResult(11, "heat-kernel baseline", bool(worst < 1e-8 and abs(e + 0.25) <= 0.02),
                       {"gaussian_err": worst, "L2_exponent": e}, {"gaussian": 1e-8, "exponent": "-0.25 +- 0.02"})


@_timed
def check_rate_fitter(w: Waves) -> CheckResult:
    t = np.geomspace(1, 1000, 60)
    worst = 0.0
    for p in (-0.25, -0.5, -0.75, 0.0):
        f = fit_algebraic_decay(t, 3.0 * (1 + t) ** p, (10.0, 1000.0))
        worst = max(worst, abs(f.exponent - p))
    ts = np.linspace(0, 20, 81)
    for r in (-0.3, 0.16):
        f = fit_exponential_rate(ts, 1e-6 * np.exp(r * ts), (1.0, 20.0))
        worst = max(worst, abs(f.exponent - r))
    return CheckResult(12, "rate-fitter self-test", bool(worst <= 0.01), {"max_error": worst}, {"error": 0.01})


@_timed
def check_growth_match(w: Waves) -> CheckResult:
    sp = w.spectrum("duffing")
    mx = float(np.nanmax(sp.surfaces.real))
    gc = linear_regime_check(w.duffing_64, mx, 64, 64, 1e-6, (1.0, 20.0))
    return CheckResult(13, "linear-regime growth match", gc.passed,
                       {"fitted": gc.fitted_rate, "max_re_lambda": mx, "relative_error": gc.relative_error},
                       {"relative": 0.05})


# --- gated checks ----------------------------------------------------------------------------

def gate_candidates(w: Waves) -> dict:
    return {name: w.verdict(name) for name in ("duffing", "cubic")}


def _first_stable(w: Waves):
    for name, v in gate_candidates(w).items():
        if v.overall:
            return name, v
    return None, None


def _skip(number: int, title: str, w: Waves) -> CheckResult:
    reasons = {name: ("D1 max Re %.3e" % v.D1.witness["max_re"]) for name, v in gate_candidates(w).items()}
    return CheckResult(number, title, None, reasons, {}, "not applicable: no candidate wave passes the spectral "
                       "gate; check 13 stands in", gated=True)


def _stable_sampler(w: Waves, name: str):
    prof = refine_profile(w.profile(name), 64)
    return make_sampler(prof, 64, 64, analyze_jordan_at_zero(prof, 64))


@_timed
def check_high_frequency(w: Waves) -> CheckResult:
    name, v = _first_stable(w)
    if name is None:
        return _skip(14, "high-frequency decay", w)
    S = _stable_sampler(w, name)
    dom = S.domain
    x = dom.nodes
    rng = np.random.default_rng(1)
    u0 = SpectralField(dom, rng.standard_normal((S.n, dom.num_points)) * np.exp(-((x - dom.period / 2) / 30) ** 2))
    theta = high_frequency_gap(S)
    fit, _ = high_frequency_decay(S, u0, np.linspace(0.5, 10, 20), v)
    C, _ = derivative_envelope(S, u0, np.geomspace(0.01, 5, 12), theta)
    return CheckResult(14, "high-frequency decay", bool(fit.exponent <= -theta + 0.05),
                       {"slope": fit.exponent, "theta_gap": theta, "derivative_C": C}, {"slope": "<= -theta + 0.05"},
                       gated=True)


@_timed
def check_green(w: Waves) -> CheckResult:
    name, v = _first_stable(w)
    if name is None:
        return _skip(15, "Green kernel decay", w)
    S = _stable_sampler(w, name)
    rep = verify_green_decay(S, np.geomspace(10, 300, 12), (2.0, np.inf), v)
    f = rep.fits
    m = {k: f[k].exponent for k in f}
    ok = (abs(f["G_tilde_L2.0"].exponent + 0.25) <= 0.05 and abs(f["G_tilde_Linf"].exponent + 0.5) <= 0.05
          and abs(f["G_tilde_y_L2.0"].exponent + 0.75) <= 0.08 and abs(f["G_tilde_y_Linf"].exponent + 1.0) <= 0.08
          and abs(f["G_tilde_t_L2.0"].exponent + 0.75) <= 0.08 and abs(f["G_tilde_t_Linf"].exponent + 1.0) <= 0.08
          and f["e_Linf"].boundedness_ratio <= 2.0 and abs(f["e_x_Linf"].exponent + 0.5) <= 0.08
          and abs(f["e_t_Linf"].exponent + 0.5) <= 0.08 and abs(f["e_y_Linf"].exponent + 0.5) <= 0.08
          and abs(f["e_x_L2"].exponent + 0.75) <= 0.08 and abs(f["e_t_L2"].exponent + 0.75) <= 0.08)
    return CheckResult(15, "Green kernel decay", bool(ok), m, {"G": 0.05, "derivatives": 0.08}, gated=True)


@_timed
def check_theorem_rates(w: Waves, horizon: float = 1000.0) -> CheckResult:
    name, v = _first_stable(w)
    if name is None:
        return _skip(16, "nonlinear decay rates", w)
    prof = refine_profile(w.profile(name), 64)
    runs = []
    for amp in (1e-3, 5e-4):
        cfg = SimConfig(prof, 64, 64, 0.02, horizon=horizon, perturbation=Perturbation(amplitude=amp),
                        snapshot_every=1.0)
        runs.append(extract_modulation(evolve_pde(cfg)))
    table = verify_theorem_rates(runs[0], (10.0, horizon), v)
    ratio, zok = zeta_scaling(runs[0], runs[1])
    m = {k: f.exponent for k, f in table.fits.items()} | {"psi_boundedness": table.psi_boundedness,
                                                           "zeta_ratio": ratio}
    return CheckResult(16, "nonlinear decay rates", bool(table.all_passed and zok), m,
                       {"tolerances": "+-0.08 / +-0.10"}, gated=True)


CHECKS = {1: check_parseval, 2: check_profile, 3: check_H2, 4: check_jordan, 5: check_structure,
          6: check_rescaled, 7: check_whitham, 8: check_cancellation, 9: check_modulated_identity,
          10: check_splitting, 11: check_heat, 12: check_rate_fitter, 13: check_growth_match,
          14: check_high_frequency, 15: check_green, 16: check_theorem_rates}

SUITES = {
    "identities": (1, 8, 9, 10, 11, 12),
    "structure": (2, 3, 4, 5, 6, 7),
    "rates": (13, 14, 15, 16),
}


def run_suite(name: str, waves: Waves | None = None) -> list[CheckResult]:
    if name not in SUITES and name != "all":
        raise KeyError(f"unknown suite {name!r}; known: {sorted(SUITES)} or 'all'")
    w = waves or Waves()
    nums = sorted(CHECKS) if name == "all" else SUITES[name]
    return [CHECKS[k](w) for k in nums]

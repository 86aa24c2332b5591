"""Stage orchestration: profile -> spectrum -> lowfreq -> linear -> nonlinear.

Every stage records what ran in a gate ledger; checks that need a spectrally
stable wave are skipped (with the reason) when the stability verdict fails.
"""

from __future__ import annotations

import datetime as _dt
import json
import platform
import warnings
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .bloch import analyze_jordan_at_zero, default_xi_grid, spectrum_sweep, stability_verdict
from .config import STAGES, RunConfig
from .errors import GateError, PerwaveError
from .linear import (apply_semigroup, high_frequency_decay, high_frequency_gap, make_sampler, split_low_high,
                     verify_cancellation, verify_green_decay)
from .lowfreq import (default_ladder, ladder_consistency, reduced_matrices, rescale_and_extract, speed_agreement,
                      whitham_characteristics)
from .model import make_system
from .nonlinear import (Perturbation, SimConfig, evolve_pde, extract_modulation, linear_regime_check,
                        tiled_profile, verify_theorem_rates)
from .numerics import SpectralField, fourier_diff
from .profile import (ProfileSolution, cached_profile, check_H2_rank, constant_state, continue_family,
                      duffing_profile, orbit_guess, refine_profile, solve_profile_bvp)


def _jsonify(o):
    if isinstance(o, dict):
        return {str(k): _jsonify(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonify(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else str(v)
    if isinstance(o, (np.integer, int)) and not isinstance(o, bool):
        return int(o)
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": float(np.real(o)), "im": float(np.imag(o))}
    if isinstance(o, np.ndarray):
        return _jsonify(o.tolist())
    return o


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class GateLedger:
    entries: list = field(default_factory=list)

    def ran(self, check: str, passed: bool | None, detail: str = ""):
        self.entries.append({"check": check, "status": "ran", "passed": passed, "detail": detail})

    def skipped(self, check: str, reason: str, fallback: str = ""):
        self.entries.append({"check": check, "status": "skipped", "reason": reason, "fallback": fallback})

    def failed(self, check: str, reason: str):
        self.entries.append({"check": check, "status": "error", "reason": reason})

    @property
    def any_failure(self) -> bool:
        return any(e["status"] == "error" or (e["status"] == "ran" and e["passed"] is False) for e in self.entries)


@dataclass
class PipelineState:
    config: RunConfig
    ledger: GateLedger = field(default_factory=GateLedger)
    profile: ProfileSolution | None = None
    jordan: object = None
    spectrum: object = None
    verdict: object = None
    report: dict = field(default_factory=dict)


def build_profile(cfg: RunConfig) -> ProfileSolution:
    system = make_system(cfg.system.name, cfg.system.parameters)
    p = cfg.profile
    if p.kind == "duffing":
        return duffing_profile(system, p.amplitude, tuple(p.q), p.num_points, p.tol)
    if p.kind == "constant":
        return constant_state(system, list(p.state), p.num_points, p.period)
    g = p.guess
    s = float(g.get("s", 0.0))
    guess = orbit_guess(system, list(g["u0"]), s, list(p.q), p.num_points, float(g.get("t_max", 400.0)),
                        int(g.get("direction", 1)))
    sol = solve_profile_bvp(system, guess, s, list(p.q), tol=p.tol)
    return refine_profile(sol, p.num_points)


def stage_profile(st: PipelineState, cache_dir: Path):
    cfg = st.config
    hint = {"config": cfg.to_dict()["system"], "profile": cfg.to_dict()["profile"]}
    st.profile = cached_profile(cache_dir, hint, lambda: build_profile(cfg))
    summary = st.profile.header()
    if cfg.profile.kind == "constant":
        st.ledger.skipped("H2 rank", "constant state has no periodic orbit")
        st.report["profile"] = summary
        return
    try:
        h2 = check_H2_rank(st.profile)
        summary["H2"] = {"rank": h2.rank, "singular_values": h2.singular_values, "fd_agreement": h2.fd_agreement}
        st.ledger.ran("H2 rank", h2.rank == st.profile.n, f"rank {h2.rank}")
    except PerwaveError as exc:
        st.ledger.failed("H2 rank", str(exc))
    st.report["profile"] = summary


def stage_spectrum(st: PipelineState, out: Path, jobs: int):
    cfg = st.config
    N = cfg.spectral.N
    prof = st.profile if st.profile.num_points == N else refine_profile(st.profile, N)
    xs = default_xi_grid(prof.period, cfg.spectral.num_uniform, cfg.spectral.decades, cfg.spectral.per_decade)
    st.spectrum = spectrum_sweep(prof, xs, N, cfg.spectral.branches, jobs=jobs)
    st.jordan = analyze_jordan_at_zero(prof, N)
    st.verdict = stability_verdict(st.spectrum, st.jordan, prof.n)
    st.spectrum.to_csv(out / "spectrum.csv")
    st.verdict.to_json(out / "verdict.json")
    j = st.jordan
    st.report["jordan"] = {"kernel_dim": j.kernel_dim, "chain_heights": j.chain_heights,
                           "multiplicity": j.multiplicity, "gap": j.gap, "residuals": j.residuals}
    st.report["verdict"] = st.verdict.to_dict()
    st.ledger.ran("spectral gate (D1, D2, D3', H3)", None,
                  "pass" if st.verdict.overall else "fail: wave is not spectrally stable")


def stage_lowfreq(st: PipelineState, out: Path, jobs: int):
    cfg = st.config
    N = cfg.spectral.N
    prof = st.profile if st.profile.num_points == N else refine_profile(st.profile, N)
    lf = cfg.lowfreq
    ladder = default_ladder(prof.period, lf.ladder_count, lf.ladder_hi, lf.ladder_lo)
    pen = reduced_matrices(prof, st.jordan, ladder, contour_points=lf.contour_points, jobs=jobs)
    rp = rescale_and_extract(pen)
    table = {"semisimple": pen.semisimple, "structure": pen.structure, "fit_residual": pen.fit_residual[1],
             "ladder_consistency": ladder_consistency(prof, pen), "a": rp.a_coeffs[1],
             "richardson_cauchy": rp.richardson_cauchy[1], "limit_vs_check": rp.limit_vs_check[1]}
    try:
        fam = continue_family(prof, tuple(lf.directions), 1, lf.step)
        fam2 = continue_family(prof, tuple(lf.directions), 1, lf.step / 2, h_s=None)
        wd, wd2 = whitham_characteristics(fam), whitham_characteristics(fam2)
        agree, agree2 = speed_agreement(rp.a_coeffs[1], wd.comoving_speeds), \
            speed_agreement(rp.a_coeffs[1], wd2.comoving_speeds)
        table.update({"whitham_speeds": wd.comoving_speeds, "whitham_condition": wd.condition,
                      "agreement": agree, "agreement_half_step": agree2, "family_notes": list(fam.notes)})
        st.ledger.ran("Whitham agreement", bool(agree < 1e-2 and agree2 <= agree), f"{agree:.3e} -> {agree2:.3e}")
    except PerwaveError as exc:
        st.ledger.failed("Whitham agreement", str(exc))
    st.report["lowfreq"] = table


def stage_linear(st: PipelineState, out: Path, jobs: int):
    cfg = st.config
    lin = cfg.linear
    prof = st.profile if st.profile.num_points == lin.N else refine_profile(st.profile, lin.N)
    jordan = st.jordan if st.jordan is not None and st.jordan.N == lin.N else analyze_jordan_at_zero(prof, lin.N)
    S = make_sampler(prof, lin.periods, lin.N, jordan, lin.epsilon, jobs)
    dom = S.domain
    x = dom.nodes
    L = dom.period
    bumps = np.stack([np.exp(-((x - L / 2) / (4 * prof.period)) ** 2)] +
                     [0.5 * np.exp(-((x - L / 3) / (3 * prof.period)) ** 2)] * (prof.n - 1))
    u0 = SpectralField(dom, bumps)
    tab = {"epsilon": S.epsilon}
    tab["identity_t0"] = (apply_semigroup(S, u0, 0.0) - u0).sup_norm() / u0.sup_norm()
    lo, hi = split_low_high(S, u0, 1.0)
    tot = apply_semigroup(S, u0, 1.0)
    tab["additivity"] = (lo + hi - tot).sup_norm() / tot.sup_norm()
    g = SpectralField(dom, bumps)
    du = tiled_profile(prof, lin.N, lin.periods)
    dfield = fourier_diff(du, 1)
    c1 = verify_cancellation(S, lambda s: g * s, lambda s: g, 1.0)
    c2 = verify_cancellation(S, lambda s: dfield * (1 - np.exp(-s)), lambda s: dfield * np.exp(-s), 1.0)
    tab["cancellation"] = [c1.residual, c2.residual]
    st.ledger.ran("linear identities", bool(tab["additivity"] < 1e-10 and max(tab["cancellation"]) < 1e-6),
                  f"additivity {tab['additivity']:.2e}, cancellation {max(tab['cancellation']):.2e}")
    if st.verdict is not None and st.verdict.overall:
        rep = verify_green_decay(S, lin.times, lin.p, st.verdict)
        tab["green_fits"] = {k: {"exponent": f.exponent, "goodness": f.goodness,
                                 "boundedness_ratio": f.boundedness_ratio} for k, f in rep.fits.items()}
        theta = high_frequency_gap(S)
        fit, _ = high_frequency_decay(S, u0, np.linspace(0.5, 10, 20), st.verdict)
        tab["high_frequency"] = {"theta_gap": theta, "slope": fit.exponent}
        st.ledger.ran("Green decay / high-frequency bounds", None, "fits recorded")
    else:
        st.ledger.skipped("Green decay / high-frequency bounds", "not applicable: wave unstable")
    st.report["linear"] = tab


def stage_nonlinear(st: PipelineState, out: Path, jobs: int):
    cfg = st.config
    nl = cfg.nonlinear
    prof = st.profile if st.profile.num_points == nl.nodes_per_period else refine_profile(st.profile,
                                                                                           nl.nodes_per_period)
    tab = {}
    max_growth = float(np.nanmax(st.spectrum.surfaces.real)) if st.spectrum is not None else 0.0
    gc = linear_regime_check(prof, max_growth, nl.periods, nl.nodes_per_period, nl.growth_amplitude,
                             tuple(nl.growth_window), nl.dt)
    tab["growth_match"] = {"fitted": gc.fitted_rate, "predicted": gc.predicted_rate,
                           "relative_error": gc.relative_error, "xi": gc.xi}
    st.ledger.ran("linear-regime growth match", gc.passed, f"relative error {gc.relative_error:.2e}")
    if st.verdict is not None and st.verdict.overall:
        pert = Perturbation(**nl.perturbation) if nl.perturbation else Perturbation()
        sc = SimConfig(prof, nl.periods, nl.nodes_per_period, nl.dt, nl.scheme, nl.horizon, pert, nl.K_norm,
                       nl.snapshot_every)
        traj = evolve_pde(sc)
        dec = extract_modulation(traj)
        table = verify_theorem_rates(dec, verdict=st.verdict)
        tab["theorem_rates"] = {k: f.exponent for k, f in table.fits.items()}
        tab["theorem_passed"] = table.passed
        st.ledger.ran("theorem rates", table.all_passed)
    else:
        st.ledger.skipped("theorem rates", "rate checks skipped: gate failed",
                          "fallback growth-match ran and " + ("passed" if gc.passed else "failed"))
    st.report["nonlinear"] = tab


def run_pipeline(cfg: RunConfig, stages=STAGES, jobs: int = 1) -> tuple[dict, int]:
    """Run the requested stages in dependency order; returns (report, exit status)."""
    wanted = [s for s in STAGES if s in set(stages)]
    # dependencies: later stages need earlier ones
    need = set(wanted)
    if need & {"lowfreq", "linear", "nonlinear"}:
        need |= {"profile", "spectrum"}
    if "spectrum" in need:
        need.add("profile")
    order = [s for s in STAGES if s in need]
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    st = PipelineState(cfg)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    status = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            for s in order:
                if s == "profile":
                    stage_profile(st, out / "cache")
                elif s == "spectrum":
                    stage_spectrum(st, out, jobs)
                elif s == "lowfreq":
                    stage_lowfreq(st, out, jobs)
                elif s == "linear":
                    stage_linear(st, out, jobs)
                elif s == "nonlinear":
                    stage_nonlinear(st, out, jobs)
        except (PerwaveError, GateError) as exc:
            st.ledger.failed(f"stage {s}", f"{type(exc).__name__}: {exc}")
            status = 1
    if st.ledger.any_failure:
        status = 1
    report = {
        "provenance": {"config_hash": cfg.digest(), "code_version": _version(), "python": platform.python_version(),
                       "started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                       "stages": order},
        **st.report,
        "gate_ledger": st.ledger.entries,
        "warnings": sorted({str(w.message) for w in caught}),
    }
    tmp = out / "report.json.tmp"
    tmp.write_text(json.dumps(_jsonify(report), indent=2))
    tmp.replace(out / "report.json")
    return report, status

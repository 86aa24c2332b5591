"""Search the built-in wave families for a spectrally stable member.

Sweeps Duffing amplitudes of the viscous p-system and a few rotating-cubic
parameter sets; writes one CSV row per wave with the Jordan count at xi = 0,
the largest Re lambda over the Brillouin zone and the overall verdict.

    python3 scripts/stability_sweep.py --out runs/sweep.csv --jobs 4
"""

from __future__ import annotations

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from perwave.bloch import analyze_jordan_at_zero, default_xi_grid, spectrum_sweep, stability_verdict
from perwave.errors import PerwaveError
from perwave.model import builtin_viscous_psystem, rotating_cubic_system
from perwave.numerics import csv_float
from perwave.profile import duffing_profile, orbit_guess, refine_profile, solve_profile_bvp

DUFFING_AMPLITUDES = (0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.98)
CUBIC_CASES = (
    dict(kappa=-1.0, beta=2.0, gamma=1.0, s=-0.5),
    dict(kappa=-1.0, beta=1.0, gamma=0.5, s=-0.5),
    dict(kappa=-1.0, beta=2.0, gamma=1.0, s=-0.3),
)


def _build(case):
    kind, p = case
    if kind == "duffing":
        return duffing_profile(builtin_viscous_psystem(), p["amplitude"], num_points=128)
    sy = rotating_cubic_system(p["kappa"], p["beta"], p["gamma"])
    g = orbit_guess(sy, [0.7, 0.0], p["s"], [0.0, 0.0], 128, t_max=400, direction=1)
    return refine_profile(solve_profile_bvp(sy, g, p["s"], [0.0, 0.0]), 256)


def examine(case) -> dict:
    kind, p = case
    row = {"family": kind, **{k: p.get(k, "") for k in ("amplitude", "kappa", "beta", "gamma", "s")}}
    try:
        prof = _build(case)
        N = prof.num_points
        spec = spectrum_sweep(prof, default_xi_grid(prof.period, num_uniform=41), N=N, strict=False)
        jd = analyze_jordan_at_zero(prof, N)
        ver = stability_verdict(spec, jd, prof.n)
        re = spec.surfaces.real
        i, _ = np.unravel_index(np.nanargmax(re), re.shape)
        row.update(period=prof.period, kernel_dim=jd.kernel_dim, chains=str(jd.chain_heights),
                   max_re=float(np.nanmax(re)), xi_at_max=float(spec.xi_grid[i]),
                   verdict="pass" if ver.overall else "fail", error="")
    except PerwaveError as exc:
        row.update(period="", kernel_dim="", chains="", max_re="", xi_at_max="", verdict="error",
                   error=f"{type(exc).__name__}: {exc}")
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/stability_sweep.csv")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    cases = [("duffing", {"amplitude": a}) for a in DUFFING_AMPLITUDES] + [("cubic", c) for c in CUBIC_CASES]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(examine, cases))
    else:
        rows = [examine(c) for c in cases]
    fields = list(rows[0])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: csv_float(v) if isinstance(v, float) else v for k, v in r.items()})
    for r in rows:
        print(f"{r['family']:8s} {r['amplitude'] or ''!s:5s} {r['kappa']!s:5s} {r['beta']!s:4s} {r['gamma']!s:4s} "
              f"{r['s']!s:5s} kernel {r['kernel_dim']!s:2s} chains {r['chains']:8s} max Re {r['max_re']!s:.10s} "
              f"{r['verdict']} {r['error']}")


if __name__ == "__main__":
    main()

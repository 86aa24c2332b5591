"""Low-frequency analysis: dual bases of the critical eigenspace, the reduced matrix
M(xi) = <V~, L_xi V>, its singular rescaling, and the Whitham characteristic speeds.

Indices below are 0-based: the translation mode u-bar' sits in slot ``n - 1`` and the
generalized (speed-variation) mode in slot ``n``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bloch import JordanStructure, assemble_L_xi, bloch_matrix, derivative_coeffs, ordered_schur
from .errors import ClusterError, ConvergenceError
from .numerics import periodic_average
from .profile import ProfileFamily, ProfileSolution


@dataclass(frozen=True)
class DualBases:
    xi1: float
    V: np.ndarray            # (n(N-1), n+1) right basis, coefficient columns
    V_tilde: np.ndarray      # (n(N-1), n+1) left basis
    period: float
    N: int
    projector: np.ndarray | None
    cluster_eigenvalues: np.ndarray
    certificate: dict = field(default_factory=dict)

    def gram(self) -> np.ndarray:
        return self.period * self.V_tilde.conj().T @ self.V


def _zero_bases(profile: ProfileSolution, jordan: JordanStructure):
    n, X, N = profile.n, profile.period, jordan.N
    M = N - 1
    du = derivative_coeffs(profile, N)
    Q = jordan.right_cluster
    Ql = jordan.left_cluster
    c = Q.shape[1]
    if c != n + 1:
        raise ClusterError(f"zero cluster has dimension {c}, expected {n + 1}")
    L0 = assemble_L_xi(profile, 0.0, 0.0, N).matrix
    unit = du / np.linalg.norm(du)
    if jordan.chain_heights:
        # kernel vectors complementary to u-bar', then the generalized vector
        T11 = Q.conj().T @ L0 @ Q
        _, s, Vh = np.linalg.svd(T11)
        kern = Q @ Vh[-jordan.kernel_dim:].conj().T
        kern = kern - np.outer(unit, unit.conj() @ kern)
        Uk, sk, _ = np.linalg.svd(kern, full_matrices=False)
        others = Uk[:, : n - 1]
        y, *_ = np.linalg.lstsq(T11, Q.conj().T @ du, rcond=None)
        g = Q @ y
        kfull = np.column_stack([unit, others])
        g = g - kfull @ (kfull.conj().T @ g)
        cols = [others[:, j] for j in range(n - 1)] + [du, g]
    else:
        comp = Q - np.outer(unit, unit.conj() @ Q)
        Uc, _, _ = np.linalg.svd(comp, full_matrices=False)
        cols = [Uc[:, j] for j in range(n - 1)] + [du, Uc[:, n - 1]]
    V = np.column_stack(cols)
    # constants pair with every slot except the translation mode
    const_idx = np.array([ci * M + M // 2 for ci in range(n)])
    slots = [j for j in range(n + 1) if j != n - 1]
    Mhat = V[np.ix_(const_idx, slots)]
    C = np.linalg.inv(Mhat).conj().T / X
    Vt = np.zeros_like(V)
    for jj, j in enumerate(slots):
        Vt[const_idx, j] = C[:, jj]
    B = X * Ql.conj().T @ V
    e = np.zeros(n + 1)
    e[n - 1] = 1.0
    y = np.linalg.solve(B.conj().T, e)
    Vt[:, n - 1] = Ql @ y
    return V, Vt, L0


def _cluster_bases(L: np.ndarray, count: int, sep_ratio: float = 2.0):
    lam = np.linalg.eigvals(L)
    order = np.argsort(np.abs(lam))
    inner, outer = np.abs(lam[order[count - 1]]), np.abs(lam[order[count]])
    if outer < sep_ratio * inner:
        raise ClusterError(f"critical group of size {count} not separated (|lambda| {inner:.3e} vs {outer:.3e})")
    r = np.sqrt(inner * outer)
    T, Z, c = ordered_schur(L, r)
    Tl, Zl, cl = ordered_schur(L.conj().T, r)
    if c != count or cl != count:
        raise ClusterError(f"cluster dimension {c} differs from {count}")
    return Z[:, :c], Zl[:, :c], lam[order[:count]]


def build_dual_bases(profile: ProfileSolution, jordan: JordanStructure, xi1: complex = 0.0,
                     want_projector: bool = False, zero_bases=None) -> DualBases:
    """Biorthogonal bases of the critical (n+1)-dimensional group of L_xi.

    At xi = 0 the left slots other than the translation slot are constants and the
    translation slot of the right basis is u-bar'. For xi != 0 the xi = 0 bases are
    pushed through the spectral projector P(xi) and re-biorthonormalised; every step
    is analytic in xi, so complex xi (for Cauchy integrals) is allowed.
    """
    n, X, N = profile.n, profile.period, jordan.N
    V0, Vt0, L0 = zero_bases if zero_bases is not None else _zero_bases(profile, jordan)
    if xi1 == 0.0:
        V, Vt = V0, Vt0
        Q, Ql = jordan.right_cluster, jordan.left_cluster
        lam = np.linalg.eigvals(np.linalg.solve(Ql.conj().T @ Q, Ql.conj().T @ L0 @ Q))
    else:
        L = bloch_matrix(profile, xi1, N)
        Q, Ql, lam = _cluster_bases(L, n + 1)
        W = np.linalg.inv(Ql.conj().T @ Q)
        V = Q @ (W @ (Ql.conj().T @ V0))
        Vt = Ql @ (W.conj().T @ (Q.conj().T @ Vt0))
        G = X * Vt.conj().T @ V
        V = V @ np.linalg.inv(G)
    P = Q @ np.linalg.inv(Ql.conj().T @ Q) @ Ql.conj().T if want_projector else None
    M = N - 1
    const_idx = np.array([ci * M + M // 2 for ci in range(n)])
    cert = {}
    if xi1 == 0.0:
        nonconst = Vt.copy()
        nonconst[const_idx] = 0.0
        mask = [j for j in range(n + 1) if j != n - 1]
        cert["left_nonconstant"] = float(np.linalg.norm(nonconst[:, mask]) / np.linalg.norm(Vt[:, mask]))
        du = derivative_coeffs(profile, N)
        cos = abs(np.vdot(V[:, n - 1], du)) / (np.linalg.norm(V[:, n - 1]) * np.linalg.norm(du))
        cert["translation_angle"] = float(np.arccos(min(1.0, cos)))
    cert["biorthogonality"] = float(np.max(np.abs(X * Vt.conj().T @ V - np.eye(n + 1))))
    return DualBases(xi1, V, Vt, X, N, P, lam, cert)


def reduced_matrix(profile: ProfileSolution, bases: DualBases) -> np.ndarray:
    L = bloch_matrix(profile, bases.xi1, bases.N)
    return bases.period * bases.V_tilde.conj().T @ L @ bases.V


def taylor_coefficients(profile: ProfileSolution, jordan: JordanStructure, radius: float | None = None,
                        points: int = 32, zero_bases=None):
    """Taylor coefficients of M(xi) about 0 by the trapezoid rule on |xi| = radius (complex xi).

    Returns (coefficients of shape (points, n+1, n+1), radius used). The radius is
    halved until the critical group stays separated on the whole circle.
    """
    zb = zero_bases if zero_bases is not None else _zero_bases(profile, jordan)
    r = 0.03 * np.pi / profile.period if radius is None else radius
    for _ in range(8):
        try:
            th = 2 * np.pi * np.arange(points) / points
            vals = np.stack([reduced_matrix(profile, build_dual_bases(profile, jordan, r * np.exp(1j * t),
                                                                      zero_bases=zb)) for t in th])
            break
        except ClusterError:
            if radius is not None:
                raise
            r *= 0.5
    else:
        raise ClusterError("critical group not separable on any contour")
    coef = np.fft.fft(vals, axis=0) / points
    coef = coef / (r ** np.arange(points))[:, None, None]
    return coef, r


def default_ladder(period: float, count: int = 6, hi: float = 1e-2, lo: float = 1e-3) -> np.ndarray:
    return np.pi / period * np.geomspace(hi, lo, count)


@dataclass
class ReducedPencil:
    n: int
    ladder: np.ndarray                      # |xi| values
    matrices: dict                          # direction -> (len(ladder), n+1, n+1)
    M0: dict
    M1: dict
    M2: dict
    semisimple: bool
    fit_residual: dict = field(default_factory=dict)
    structure: dict = field(default_factory=dict)
    bases0: DualBases | None = None
    ladder_bases: dict = field(default_factory=dict)


def _poly_fit(h: np.ndarray, Ms: np.ndarray, degree: int):
    A = np.vander(h, degree + 1, increasing=True)
    flat = Ms.reshape(len(h), -1)
    coef, *_ = np.linalg.lstsq(A, flat, rcond=None)
    resid = float(np.max(np.abs(A @ coef - flat)))
    return coef.reshape((degree + 1,) + Ms.shape[1:]), resid


def structure_residuals(M0: np.ndarray, M1: np.ndarray, n: int, semisimple: bool) -> dict:
    """Deviations from the expected pattern of M0 and the zero entries of M1 (column n-1)."""
    expected = np.zeros_like(M0)
    if not semisimple:
        expected[n - 1, n] = 1.0
    zeros = [abs(M1[i, n - 1]) for i in range(n - 1)] + [abs(M1[n, n - 1])]
    nrm = np.linalg.norm(M0)
    return {
        "M0_pattern": float(np.max(np.abs(M0 - expected))),
        "M1_zeros": float(max(zeros)),
        "M0_nilpotency": float(np.linalg.norm(M0 @ M0) / nrm) if nrm > 0 else 0.0,
        "M0_norm": float(nrm),
    }


def reduced_matrices(profile: ProfileSolution, jordan: JordanStructure, ladder: Sequence[float] | None = None,
                     directions: Sequence[int] = (1, -1), fit_tol: float = 1e-6, contour_points: int = 32,
                     contour_radius: float | None = None, jobs: int = 1) -> ReducedPencil:
    """M(xi) on a ladder of |xi| per direction, plus its expansion M0 + |xi| M1 + |xi|^2 M2.

    The expansion coefficients come from a Cauchy integral in complex xi; the ladder
    values are then fitted by the resulting Taylor polynomial and the worst mismatch
    is reported as the fit residual (a check on both the ladder and the expansion).
    """
    n = profile.n
    ladder = default_ladder(profile.period) if ladder is None else np.asarray(ladder, dtype=float)
    if ladder.size < 4:
        raise ValueError("ladder needs at least 4 points")
    semisimple = not jordan.chain_heights
    zb = _zero_bases(profile, jordan)
    b0 = build_dual_bases(profile, jordan, 0.0, zero_bases=zb)
    coef, r = taylor_coefficients(profile, jordan, contour_radius, contour_points, zero_bases=zb)
    coef_half, _ = taylor_coefficients(profile, jordan, r / 2, contour_points, zero_bases=zb)
    kmax = contour_points // 2
    mats, M0, M1, M2, fres, lb = {}, {}, {}, {}, {}, {}
    for w in directions:
        def one(h):
            b = build_dual_bases(profile, jordan, w * h, zero_bases=zb)
            return b, reduced_matrix(profile, b)
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(jobs) as ex:
                out = list(ex.map(one, ladder))
        else:
            out = [one(h) for h in ladder]
        Ms = np.stack([o[1] for o in out])
        poly = np.stack([sum(coef[k] * (w * h) ** k for k in range(kmax)) for h in ladder])
        resid = float(np.max(np.abs(poly - Ms)))
        mats[w], lb[w] = Ms, [o[0] for o in out]
        M0[w], M1[w], M2[w] = coef[0], w * coef[1], coef[2]
        fres[w] = resid
        if resid > fit_tol:
            warnings.warn(f"reduced-matrix fit residual {resid:.2e} exceeds {fit_tol:.0e}; ladder inadequate",
                          RuntimeWarning, stacklevel=2)
    struct = {w: structure_residuals(M0[w], M1[w], n, semisimple) for w in directions}
    for w in directions:
        struct[w]["contour_radius"] = float(r)
        struct[w]["radius_halving_change"] = float(np.max(np.abs(coef[:3] - coef_half[:3])))
    return ReducedPencil(n, ladder, mats, M0, M1, M2, semisimple, fres, struct, b0, lb)


# --- rescaling -------------------------------------------------------------------------------

@dataclass
class RescaledPencil:
    S_weights: np.ndarray                  # diagonal of S at each ladder point
    M_check_0: dict
    M_check_1: dict
    m_branches: dict                       # direction -> (len(ladder), n+1)
    m_limits: dict                         # direction -> extrapolated m_j(0)
    a_coeffs: dict                         # direction -> complex a_j
    richardson_cauchy: dict
    limit_vs_check: dict


def _match_sequence(rows: np.ndarray) -> np.ndarray:
    """Reorder each row of eigenvalues to follow the previous one."""
    out = rows.copy()
    for i in range(1, rows.shape[0]):
        cost = np.abs(out[i - 1][:, None] - rows[i][None, :])
        _, cols = linear_sum_assignment(cost)
        out[i] = rows[i][cols]
    return out


def richardson(h: np.ndarray, vals: np.ndarray, order: int | None = None):
    """Polynomial extrapolation to h = 0 using the smallest ``order+1`` ladder points.

    Returns the limit and the list of successive estimates (increasing order).
    """
    idx = np.argsort(h)
    h, vals = h[idx], vals[idx]
    order = order or len(h) - 1
    ests = []
    for p in range(1, order + 1):
        A = np.vander(h[: p + 1], p + 1, increasing=True)
        ests.append(np.linalg.solve(A, vals[: p + 1])[0])
    return ests[-1], ests


def check_matrix_limit(pencil: ReducedPencil, w: int) -> np.ndarray:
    """Leading term of the rescaled matrix assembled from the fitted M0, M1, M2."""
    n = pencil.n
    M0, M1, M2 = pencil.M0[w], pencil.M1[w], pencil.M2[w]
    if pencil.semisimple:
        return M1.copy()
    C = M1.copy()
    C[n - 1, :] = M0[n - 1, :]
    C[:, n - 1] = M2[:, n - 1]
    C[n - 1, n - 1] = M1[n - 1, n - 1]
    return C


def rescale_and_extract(pencil: ReducedPencil, cauchy_tol: float = 1e-3, order: int = 3) -> RescaledPencil:
    """Form the rescaled matrices on the ladder, extrapolate their eigenvalues to |xi| = 0.

    Nonsemisimple: |xi|^{-1} S M S^{-1}, S = diag(I_{n-1}, |xi|, 1). Semisimple: M/|xi|.
    a_j follows from lambda_j = -i a_j xi: a = i m for xi > 0 and a = -i m for xi < 0.
    """
    n, h = pencil.n, pencil.ladder
    Sw = np.ones((h.size, n + 1))
    if not pencil.semisimple:
        Sw[:, n - 1] = h
    mcheck0, mcheck1, branches, limits, acoef, cauchy, lvc = {}, {}, {}, {}, {}, {}, {}
    for w, Ms in pencil.matrices.items():
        rows = []
        for k, hk in enumerate(h):
            R = (Sw[k][:, None] * Ms[k] / Sw[k][None, :]) / hk
            rows.append(np.linalg.eigvals(R))
        rows = np.array(rows)
        # order ladder from the smallest |xi| outward so matching follows continuity
        srt = np.argsort(h)
        matched = _match_sequence(rows[srt])
        hs = h[srt]
        C0 = check_matrix_limit(pencil, w)
        ev0 = np.linalg.eigvals(C0)
        lim = np.zeros(n + 1, dtype=complex)
        cs = np.zeros(n + 1)
        for j in range(n + 1):
            est, ests = richardson(hs, matched[:, j], order)
            lim[j] = est
            cs[j] = abs(ests[-1] - ests[-2]) if len(ests) > 1 else 0.0
        if np.max(cs) > cauchy_tol:
            raise ConvergenceError(f"Richardson estimates not converging (successive difference {np.max(cs):.2e})")
        cost = np.abs(lim[:, None] - ev0[None, :])
        r, c = linear_sum_assignment(cost)
        ev0 = ev0[c[np.argsort(r)]]
        mcheck0[w] = C0
        mcheck1[w] = None
        branches[w] = matched
        limits[w] = lim
        acoef[w] = (1j * lim) if w > 0 else (-1j * lim)
        cauchy[w] = float(np.max(cs))
        lvc[w] = float(np.max(np.abs(lim - ev0)))
    return RescaledPencil(Sw, mcheck0, mcheck1, branches, limits, acoef, cauchy, lvc)


def ladder_consistency(profile: ProfileSolution, pencil: ReducedPencil) -> float:
    """max over the ladder of the mismatch between eig(M(xi)) and the critical eigenvalues of L_xi."""
    worst = 0.0
    for w, Ms in pencil.matrices.items():
        for k, hk in enumerate(pencil.ladder):
            lam_full = pencil.ladder_bases[w][k].cluster_eigenvalues
            lam_red = np.linalg.eigvals(Ms[k])
            cost = np.abs(lam_full[:, None] - lam_red[None, :])
            r, c = linear_sum_assignment(cost)
            worst = max(worst, float(np.max(cost[r, c])))
    return worst


def planted_pencil(check0: np.ndarray, ladder: Sequence[float], semisimple: bool = False,
                   check1: np.ndarray | None = None) -> ReducedPencil:
    """Synthetic pencil M(h) = h S^{-1}(check0 + h check1) S with known rescaled limit."""
    check0 = np.asarray(check0, dtype=complex)
    n = check0.shape[0] - 1
    check1 = np.zeros_like(check0) if check1 is None else np.asarray(check1, dtype=complex)
    h = np.asarray(ladder, dtype=float)
    mats = []
    for hk in h:
        s = np.ones(n + 1)
        if not semisimple:
            s[n - 1] = hk
        C = check0 + hk * check1
        mats.append(hk * (C / s[:, None]) * s[None, :])
    mats = np.array(mats)
    coef, res = _poly_fit(h, mats, min(4, h.size - 1))
    pencils = {1: mats, -1: mats.conj()}
    M0 = {1: coef[0], -1: coef[0].conj()}
    M1 = {1: coef[1], -1: coef[1].conj()}
    M2 = {1: coef[2], -1: coef[2].conj()}
    return ReducedPencil(n, h, pencils, M0, M1, M2, semisimple, {1: res, -1: res})


# --- Whitham modulation system -------------------------------------------------------------

@dataclass(frozen=True)
class WhithamData:
    parameters: tuple[str, ...]
    averages: np.ndarray          # M(a) at the base
    flux_averages: np.ndarray     # F(a) at the base
    frequency: float
    speed: float
    A0: np.ndarray                # d(M, Omega)/da
    A1: np.ndarray                # d(F, Omega s)/da
    characteristic_speeds: np.ndarray       # lab frame
    comoving_speeds: np.ndarray
    condition: float
    step: float


def whitham_speeds(A0: np.ndarray, A1: np.ndarray, cond_limit: float = 1e8):
    """Generalised eigenvalues of the pencil (A1, A0), sorted by real then imaginary part."""
    cond = float(np.linalg.cond(A0))
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConvergenceError(f"singular change of variables to (M, Omega): condition number {cond:.2e}")
    c = np.linalg.eigvals(np.linalg.solve(A0, A1))
    return c[np.lexsort((c.imag, c.real))], cond


def _whitham_state(sol: ProfileSolution):
    u = np.real(sol.profile.values)
    Mavg = periodic_average(sol.profile).real
    Favg = np.mean(sol.system.flux(u), axis=-1)
    Om = 1.0 / sol.period
    return np.concatenate([Mavg, [Om]]), np.concatenate([Favg, [Om * sol.speed]])


def whitham_characteristics(family: ProfileFamily, cond_limit: float = 1e8) -> WhithamData:
    """Linearised Whitham system from centered differences over the family patch.

    The family must hold, for each of its n+1 directions, members one step on
    either side of the base (as produced by continue_family with steps >= 1).
    """
    base = family.base
    n = base.n
    if len(family.directions) != n + 1:
        raise ValueError(f"need {n + 1} continuation directions, family has {len(family.directions)}")
    W0, G0 = _whitham_state(base)
    A0 = np.zeros((n + 1, n + 1))
    A1 = np.zeros((n + 1, n + 1))
    steps = []
    for k, name in enumerate(family.directions):
        plus = minus = None
        for mem, par in zip(family.members, family.parameters):
            if par["direction"] != name:
                continue
            if par["offset"] > 0 and (plus is None or par["offset"] < plus[1]):
                plus = (mem, par["offset"])
            if par["offset"] < 0 and (minus is None or par["offset"] > minus[1]):
                minus = (mem, par["offset"])
        if plus is None or minus is None:
            raise ValueError(f"family lacks members on both sides along {name}")
        Wp, Gp = _whitham_state(plus[0])
        Wm, Gm = _whitham_state(minus[0])
        dh = plus[1] - minus[1]
        A0[:, k] = (Wp - Wm) / dh
        A1[:, k] = (Gp - Gm) / dh
        steps.append(dh / 2)
    speeds, cond = whitham_speeds(A0, A1, cond_limit)
    return WhithamData(tuple(family.directions), W0[:n], G0[:n], W0[n], base.speed, A0, A1, speeds,
                       speeds - base.speed, cond, float(max(steps)))


def speed_agreement(bloch_a: np.ndarray, whitham_c: np.ndarray) -> float:
    """max |a_j - c_j| / max |a| after optimal pairing."""
    a = np.asarray(bloch_a, dtype=complex)
    c = np.asarray(whitham_c, dtype=complex)
    cost = np.abs(a[:, None] - c[None, :])
    r, k = linear_sum_assignment(cost)
    return float(np.max(cost[r, k]) / max(np.max(np.abs(a)), 1e-300))

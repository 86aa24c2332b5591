"""Bloch operators, Bloch transform, spectral sweeps and the Jordan structure at xi = 0.

The Bloch operator L_xi = e^{-i xi x} L e^{i xi x} acts on X-periodic functions
w(x) = sum_k c_k exp(2 pi i k x / X). It is discretised by Fourier-Galerkin on the
symmetric mode set |k| <= N/2 - 1, giving a matrix of size n(N-1) acting on
coefficient vectors ordered component-major (index c*M + k). With the inner
product <f, g> = X f^H g on coefficients this is the L2 product on [0, X].
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .errors import BranchMatchingError, ClusterError
from .model import linearized_coefficient
from .numerics import PeriodicGrid, SpectralField, csv_float
from .profile import ProfileSolution

BRILLOUIN_SLACK = 1e-12


def modes(N: int) -> np.ndarray:
    K = N // 2 - 1
    return np.arange(-K, K + 1)


@dataclass(frozen=True)
class BlochOperator:
    profile: ProfileSolution
    xi1: float
    xi_transverse_sq: float
    N: int
    matrix: np.ndarray

    @property
    def period(self) -> float:
        return self.profile.period

    @property
    def num_modes(self) -> int:
        return self.N - 1


def _coefficient_matrix(values: np.ndarray, N: int) -> np.ndarray:
    """Convolution blocks C[i, j][k, l] = coeff(values[i, j])(k - l) on the symmetric modes."""
    ks = modes(N)
    nn = values.shape[0]
    hat = np.fft.fft(values, axis=-1) / values.shape[-1]
    idx = (ks[:, None] - ks[None, :]) % values.shape[-1]
    M = ks.size
    C = np.zeros((nn * M, nn * M), dtype=complex)
    for i in range(nn):
        for j in range(nn):
            C[i * M:(i + 1) * M, j * M:(j + 1) * M] = hat[i, j][idx]
    return C


def comoving_coefficient(profile: ProfileSolution, N: int | None = None) -> np.ndarray:
    """df(u-bar) - s I sampled on N nodes, shape (n, n, N)."""
    N = N or profile.num_points
    prof = profile.profile.resample(N) if N != profile.num_points else profile.profile
    A = linearized_coefficient(profile.system, SpectralField(prof.grid, np.real(prof.values)))
    return A - profile.speed * np.eye(profile.n)[:, :, None]


def bloch_matrix(profile: ProfileSolution, xi, N: int, xi_transverse_sq: float = 0.0,
                 transverse_coefficient: np.ndarray | None = None) -> np.ndarray:
    """Raw Galerkin matrix; ``xi`` may be complex (used for Cauchy integrals in xi)."""
    n = profile.n
    ks = modes(N)
    kt = 2 * np.pi * ks / profile.period + xi
    C = _coefficient_matrix(comoving_coefficient(profile, N), N)
    ktn = np.tile(kt, n)
    L = -1j * ktn[:, None] * C
    L[np.diag_indices(n * ks.size)] += -ktn ** 2 - xi_transverse_sq
    if transverse_coefficient is not None:
        L += -1j * _coefficient_matrix(np.asarray(transverse_coefficient, dtype=float), N)
    return L


def assemble_L_xi(profile: ProfileSolution, xi1: float, xi_transverse_sq: float = 0.0,
                  N: int | None = None, transverse_coefficient: np.ndarray | None = None) -> BlochOperator:
    """Galerkin matrix of (d + i xi)^2 w - (d + i xi)(A w) - |xi_t|^2 w.

    ``transverse_coefficient`` (shape (n, n, N)) is sum_j xi_j A^j for transverse
    directions; when given it adds -i times its convolution matrix.
    """
    N = N or profile.num_points
    if N % 2 or N < 16:
        raise ValueError(f"N must be even and >= 16, got {N}")
    X = profile.period
    if abs(xi1) > np.pi / X * (1 + BRILLOUIN_SLACK):
        raise ValueError(f"xi1 = {xi1} lies outside the Brillouin zone [-pi/X, pi/X]")
    if xi_transverse_sq < 0:
        raise ValueError("xi_transverse_sq must be nonnegative")
    if not profile.profile.is_finite():
        raise ValueError("profile has non-finite entries")
    L = bloch_matrix(profile, xi1, N, xi_transverse_sq, transverse_coefficient)
    return BlochOperator(profile, float(xi1), float(xi_transverse_sq), N, L)


def assemble_adjoint_form(profile: ProfileSolution, N: int | None = None) -> np.ndarray:
    """Galerkin matrix of w'' + A^T w' at xi = 0 (the formal L2 adjoint of L_0)."""
    N = N or profile.num_points
    n = profile.n
    ks = modes(N)
    k = 2 * np.pi * ks / profile.period
    AT = np.transpose(comoving_coefficient(profile, N), (1, 0, 2))
    C = _coefficient_matrix(AT, N)
    L = C * (1j * np.tile(k, n))[None, :]
    L[np.diag_indices(n * ks.size)] += -np.tile(k, n) ** 2
    return L


def field_to_coeffs(f: SpectralField, N: int) -> np.ndarray:
    """Coefficient vector (length n(N-1)) of an X-periodic field on the symmetric mode set."""
    P = f.grid.num_points
    c = np.fft.fft(f.values, axis=-1) / P
    ks = modes(N)
    out = np.zeros((f.n, ks.size), dtype=complex)
    mask = np.abs(ks) < P // 2
    out[:, mask] = c[:, ks[mask] % P]
    return out.ravel()


def coeffs_to_field(vec: np.ndarray, n: int, period: float, num_points: int | None = None) -> SpectralField:
    """Inverse of field_to_coeffs, sampled on ``num_points`` nodes (default N)."""
    vec = np.asarray(vec)
    M = vec.size // n
    num_points = num_points or M + 1
    if num_points < M + 1:
        raise ValueError("too few sample points for the mode set")
    ks = modes(M + 1)
    full = np.zeros((n, num_points), dtype=complex)
    full[:, ks % num_points] = vec.reshape(n, M)
    return SpectralField(PeriodicGrid(num_points, period), np.fft.ifft(full, axis=-1) * num_points)


def inner(f: np.ndarray, g: np.ndarray, period: float) -> complex:
    return complex(period * np.vdot(f, g))


# --- Bloch transform -------------------------------------------------------------------------

@dataclass(frozen=True)
class BlochTransform:
    xis: np.ndarray
    channels: tuple[SpectralField, ...]
    base_period: float
    multiple: int

    @property
    def spacing(self) -> float:
        return 2 * np.pi / (self.multiple * self.base_period)


def _channel_indices(m: int) -> np.ndarray:
    """Channel labels j with xi_j = 2 pi j/(m X) in the centered range (-m/2, m/2]."""
    return np.arange(-((m - 1) // 2), m // 2 + 1)


def bloch_transform(u: SpectralField, base_period: float) -> BlochTransform:
    """Split a field on an m-period domain into its m quasimomentum channels.

    Channel j carries u_j(x) = m X sum_k c_{j + m k} exp(2 pi i k x / X), where c are
    the Fourier coefficients of u on the full domain.
    """
    m_float = u.period / base_period
    m = int(round(m_float))
    if m < 1 or abs(m_float - m) > 1e-9 * m_float:
        raise ValueError(f"domain length {u.period} is not an integer multiple of {base_period}")
    Ntot = u.grid.num_points
    if Ntot % m:
        raise ValueError("number of grid points must be divisible by the number of periods")
    Nc = Ntot // m
    c = np.fft.fft(u.values, axis=-1) / Ntot
    K = np.fft.fftfreq(Ntot, d=1.0 / Ntot).astype(int)
    labels = _channel_indices(m)
    chans = []
    for j in labels:
        sel = (K - j) % m == 0
        k = (K[sel] - j) // m
        coeffs = np.zeros((u.n, Nc), dtype=complex)
        coeffs[:, k % Nc] = c[:, sel]
        vals = np.fft.ifft(coeffs, axis=-1) * Nc * (m * base_period)
        chans.append(SpectralField(PeriodicGrid(Nc, base_period), vals))
    return BlochTransform(2 * np.pi * labels / (m * base_period), tuple(chans), base_period, m)


def inverse_bloch_transform(bt: BlochTransform) -> SpectralField:
    m, X = bt.multiple, bt.base_period
    Nc = bt.channels[0].grid.num_points
    Ntot = m * Nc
    n = bt.channels[0].n
    K = np.fft.fftfreq(Ntot, d=1.0 / Ntot).astype(int)
    c = np.zeros((n, Ntot), dtype=complex)
    for j, ch in zip(_channel_indices(m), bt.channels):
        sel = (K - j) % m == 0
        k = (K[sel] - j) // m
        cj = np.fft.fft(ch.values, axis=-1) / Nc
        c[:, sel] = cj[:, k % Nc] / (m * X)
    return SpectralField(PeriodicGrid(Ntot, m * X), np.fft.ifft(c, axis=-1) * Ntot)


def bloch_norm(bt: BlochTransform) -> float:
    """sqrt((1/(2 pi X)) sum_j dxi ||u_j||^2), equal to the L2 norm on the full domain."""
    tot = sum(ch.l2_norm() ** 2 for ch in bt.channels)
    return float(np.sqrt(bt.spacing * tot / (2 * np.pi * bt.base_period)))


# --- spectra over quasimomentum ---------------------------------------------------------

def default_xi_grid(period: float, num_uniform: int = 41, decades: int = 4, per_decade: int = 3) -> np.ndarray:
    """Uniform grid on the Brillouin zone plus a geometric refinement towards 0 (both signs)."""
    b = np.pi / period
    uni = np.linspace(-b, b, num_uniform)
    geo = b * np.logspace(-decades, -1, decades * per_decade + 1)
    pts = np.concatenate([uni, geo, -geo, [0.0]])
    return np.unique(np.round(pts, 15))


@dataclass
class BlochSpectrum:
    xi_grid: np.ndarray
    surfaces: np.ndarray               # (num_xi, num_branches) complex
    labels: list[str]
    residuals: np.ndarray              # (num_xi, num_branches)
    critical: list[int]                # indices of branches through 0 at xi = 0
    period: float
    gap: float = float("nan")
    eigvec_store: dict = field(default_factory=dict)
    ambiguities: list = field(default_factory=list)
    num_points: int = 0

    def branch(self, j: int) -> np.ndarray:
        return self.surfaces[:, j]

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".csv.tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi1", "branch", "re_lambda", "im_lambda"])
            for i, xi in enumerate(self.xi_grid):
                for j, lab in enumerate(self.labels):
                    lam = self.surfaces[i, j]
                    w.writerow([csv_float(xi), lab, csv_float(lam.real), csv_float(lam.imag)])
        tmp.replace(path)


def _eig_at(profile, xi, N):
    op = assemble_L_xi(profile, xi, 0.0, N)
    lam, V = np.linalg.eig(op.matrix)
    V = V / np.linalg.norm(V, axis=0)
    res = np.linalg.norm(op.matrix @ V - V * lam, axis=0)
    order = np.argsort(-lam.real)
    return lam[order], V[:, order], res[order]


def _zero_index(lam: np.ndarray, count: int) -> np.ndarray:
    return np.argsort(np.abs(lam))[:count]


def spectrum_sweep(profile: ProfileSolution, xi_grid: Sequence[float] | None = None, N: int | None = None,
                   num_branches_tracked: int = 8, jobs: int = 1, strict: bool = True,
                   store_radius: float | None = None) -> BlochSpectrum:
    """Dense eigensolves on every grid point, branches matched by eigenvector overlap.

    Branches are started at xi = 0 from the ``num_branches_tracked`` eigenvalues of
    largest real part and followed outward in both directions. A matched pair with
    overlap below 0.5 that is not explained by a near-degenerate group raises
    BranchMatchingError (or is recorded when ``strict`` is False).
    """
    N = N or profile.num_points
    X = profile.period
    xs = np.unique(np.asarray(default_xi_grid(X) if xi_grid is None else xi_grid, dtype=float))
    if np.any(np.abs(xs) > np.pi / X * (1 + BRILLOUIN_SLACK)):
        raise ValueError("xi grid leaves the Brillouin zone")
    if not np.any(xs == 0.0):
        raise ValueError("xi grid must contain 0")
    K = num_branches_tracked
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(lambda x: _eig_at(profile, x, N), xs))
    else:
        results = [_eig_at(profile, x, N) for x in xs]
    i0 = int(np.flatnonzero(xs == 0.0)[0])
    surfaces = np.full((xs.size, K), np.nan + 0j)
    residuals = np.full((xs.size, K), np.nan)
    vecs = [None] * xs.size
    lam0, V0, r0 = results[i0]
    surfaces[i0], residuals[i0] = lam0[:K], r0[:K]
    vecs[i0] = V0[:, :K]
    ambiguities = []
    scale = max(1.0, float(np.max(np.abs(lam0[:K]))))
    for direction in (+1, -1):
        prev = i0
        rng = range(i0 + 1, xs.size) if direction > 0 else range(i0 - 1, -1, -1)
        for i in rng:
            lam, V, r = results[i]
            pool = min(lam.size, 3 * K)
            plam, pV = lam[:pool], V[:, :pool]
            ov = np.abs(vecs[prev].conj().T @ pV)
            # predict from the previous two points when available
            pred = surfaces[prev]
            dist = np.abs(pred[:, None] - plam[None, :]) / scale
            rows, cols = linear_sum_assignment(-ov + dist)
            order = np.empty(K, dtype=int)
            order[rows] = cols
            for a, b in zip(rows, cols):
                if ov[a, b] < 0.5:
                    lam_b = plam[b]
                    near = np.abs(plam - lam_b) < 1e-5 * max(1.0, abs(lam_b))
                    if near.sum() > 1 or abs(xs[i]) < 1e-12:
                        continue
                    msg = f"branch matching ambiguous at xi = {xs[i]:.6e} (overlap {ov[a, b]:.3f})"
                    if strict:
                        raise BranchMatchingError(msg)
                    ambiguities.append((float(xs[i]), int(a), float(ov[a, b])))
            surfaces[i] = plam[order]
            residuals[i] = r[:pool][order]
            vecs[i] = pV[:, order]
            prev = i
    n = profile.n
    crit = list(np.argsort(np.abs(surfaces[i0]))[: n + 1])
    noncrit = np.delete(lam0, _zero_index(lam0, n + 1))
    gap = float(np.min(np.abs(noncrit))) if noncrit.size else float("nan")
    store = {}
    radius = store_radius if store_radius is not None else 1e-2 * np.pi / X
    for i, x in enumerate(xs):
        if abs(x) <= radius:
            store[float(x)] = vecs[i][:, crit]
    labels = [f"b{j}" for j in range(K)]
    return BlochSpectrum(xs, surfaces, labels, residuals, [int(c) for c in crit], X, gap, store,
                         ambiguities, N)


# --- Jordan structure at xi = 0 ------------------------------------------------------------

@dataclass(frozen=True)
class JordanStructure:
    kernel_dim: int
    chain_heights: list[int]
    multiplicity: int
    right_kernel_basis: list[SpectralField]
    left_kernel_basis: list[SpectralField]
    chain_base: SpectralField | None
    generalized_vector: SpectralField | None
    residuals: dict
    cluster_radius: float
    gap: float
    angle_to_derivative: float
    left_constant_residual: float
    ambiguous_dims: tuple[int, ...] = ()
    # coefficient-space data reused by the low-frequency layer
    right_cluster: np.ndarray | None = None
    left_cluster: np.ndarray | None = None
    N: int = 0

    @property
    def total(self) -> int:
        return self.kernel_dim + sum(h - 1 for h in self.chain_heights)


def zero_cluster(lam: np.ndarray, radius_floor: float = 1e-6, radius_factor: float = 1e-3,
                 seed_radius: float = 1e-3) -> tuple[np.ndarray, float, float]:
    """Cluster of eigenvalues near 0, its radius max(floor, factor * gap) and the gap."""
    absl = np.abs(lam)
    members = absl < seed_radius
    if not members.any():
        raise ClusterError("no eigenvalues near zero")
    for _ in range(5):
        outside = absl[~members]
        gap = float(outside.min()) if outside.size else float("inf")
        r = max(radius_floor, radius_factor * gap)
        new = absl < r
        if np.array_equal(new, members):
            break
        members = new
    outside = absl[~members]
    gap = float(outside.min()) if outside.size else float("inf")
    if gap < 10 * r:
        raise ClusterError(f"zero cluster not separable: radius {r:.2e}, gap {gap:.2e}")
    return members, r, gap


def ordered_schur(L: np.ndarray, radius: float):
    T, Z, sdim = sla.schur(L, output="complex", sort=lambda z: abs(z) < radius)
    return T, Z, sdim


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float(np.pi / 2)
    c = min(1.0, abs(np.vdot(a, b)) / (na * nb))
    return float(np.arccos(c))


def _null_space(T: np.ndarray, tol: float) -> np.ndarray:
    U, s, Vh = np.linalg.svd(T)
    r = int(np.sum(s > tol))
    return Vh[r:].conj().T


def derivative_coeffs(profile: ProfileSolution, N: int) -> np.ndarray:
    return field_to_coeffs(profile.derivative.resample(N) if N != profile.num_points else profile.derivative, N)


def analyze_jordan_at_zero(profile: ProfileSolution, N: int | None = None, radius_floor: float = 1e-6,
                           radius_factor: float = 1e-3, rank_tol: float = 1e-6, strict: bool = False
                           ) -> JordanStructure:
    """Kernel dimension and Jordan chains of L_0 restricted to its zero cluster.

    The cluster is split off by ordered Schur forms of L_0 and L_0^H; the
    restricted block is upper triangular and its ranks (and those of its powers,
    thresholded at ``rank_tol`` times the gap) give the Jordan block sizes.
    """
    N = N or profile.num_points
    n = profile.n
    X = profile.period
    L = assemble_L_xi(profile, 0.0, 0.0, N).matrix
    lam = np.linalg.eigvals(L)
    members, r, gap = zero_cluster(lam, radius_floor, radius_factor)
    T, Z, c = ordered_schur(L, r)
    if c != int(members.sum()):
        raise ClusterError(f"Schur reordering found {c} cluster eigenvalues, eigvals found {members.sum()}")
    Q = Z[:, :c]
    T11 = T[:c, :c]
    thr = rank_tol * gap
    ranks = [c]
    P = np.eye(c)
    svs = []
    for _ in range(c):
        P = P @ T11
        s = np.linalg.svd(P, compute_uv=False) if c else np.zeros(0)
        svs.append(s)
        ranks.append(int(np.sum(s > thr)))
    sizes = []
    for k in range(1, c + 1):
        ge_k = ranks[k - 1] - ranks[k]
        ge_k1 = ranks[k] - ranks[k + 1] if k + 1 < len(ranks) else ranks[k]
        sizes += [k] * (ge_k - ge_k1)
    kernel_dim = c - ranks[1]
    chains = sorted((h for h in sizes if h >= 2), reverse=True)
    s1 = svs[0] if svs else np.zeros(0)
    ambiguous = tuple(sorted({kernel_dim, c - int(np.sum(s1 > thr * 1e-2)), c - int(np.sum(s1 > thr * 1e2))}))
    if len(ambiguous) > 1:
        msg = f"kernel dimension ambiguous under tolerance: candidates {ambiguous}"
        if strict:
            raise ClusterError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    kern = Q @ _null_space(T11, thr)
    Tl, Zl, cl = ordered_schur(L.conj().T, r)
    Ql = Zl[:, :cl]
    lkern = Ql @ _null_space(Tl[:cl, :cl], thr)

    du = derivative_coeffs(profile, N)
    # chain base: the range of the nilpotent part, which lies inside the kernel
    chain_base = None
    gvec = None
    du_norm = np.linalg.norm(du)
    res = {"L0_derivative": float(np.linalg.norm(L @ du) / du_norm) if du_norm > 0 else 0.0}
    if chains:
        U, s, Vh = np.linalg.svd(T11)
        base = Q @ U[:, 0]
        base = base * (np.vdot(base, du) / abs(np.vdot(base, du)))
        chain_base = base
        # generalized vector: L0 g = u-bar' inside the cluster
        y, *_ = np.linalg.lstsq(T11, Q.conj().T @ du, rcond=None)
        g = Q @ y
        g = g - kern @ (kern.conj().T @ g)
        gvec = g
        res["generalized"] = float(np.linalg.norm(L @ g - du) / np.linalg.norm(g))
    angle = _angle(chain_base, du) if chain_base is not None else float("nan")
    # left kernel against constants: constants occupy mode 0 of every component
    M = N - 1
    const_idx = np.array([ci * M + M // 2 for ci in range(n)])
    if lkern.shape[1]:
        proj = np.zeros_like(lkern)
        proj[const_idx] = lkern[const_idx]
        left_res = float(np.linalg.norm(lkern - proj) / np.linalg.norm(lkern))
        E = np.zeros((lkern.shape[0], n), dtype=complex)
        E[const_idx, np.arange(n)] = 1.0
        Qk, _ = np.linalg.qr(lkern)
        res["constants_in_left_kernel"] = float(np.linalg.norm(E - Qk @ (Qk.conj().T @ E)) / np.sqrt(n))
    else:
        left_res = float("nan")
    res["left_kernel_in_constants"] = left_res
    to_field = lambda v: coeffs_to_field(v, n, X, N)
    return JordanStructure(
        kernel_dim=kernel_dim, chain_heights=chains, multiplicity=c,
        right_kernel_basis=[to_field(kern[:, j]) for j in range(kern.shape[1])],
        left_kernel_basis=[to_field(lkern[:, j]) for j in range(lkern.shape[1])],
        chain_base=to_field(chain_base) if chain_base is not None else None,
        generalized_vector=to_field(gvec) if gvec is not None else None,
        residuals=res, cluster_radius=r, gap=gap, angle_to_derivative=angle,
        left_constant_residual=left_res, ambiguous_dims=ambiguous if len(ambiguous) > 1 else (),
        right_cluster=Q, left_cluster=Ql, N=N)


def modulo_kernel_angle(jordan: JordanStructure, a: SpectralField, b: SpectralField) -> float:
    """Angle between two fields after removing their kernel components."""
    N = jordan.N
    K = np.stack([field_to_coeffs(f, N) for f in jordan.right_kernel_basis], axis=1)
    Qk, _ = np.linalg.qr(K)
    va, vb = field_to_coeffs(a, N), field_to_coeffs(b, N)
    va = va - Qk @ (Qk.conj().T @ va)
    vb = vb - Qk @ (Qk.conj().T @ vb)
    return _angle(va, vb)


# --- stability verdict --------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    status: str           # "pass", "fail" or "marginal"
    witness: dict

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass(frozen=True)
class StabilityVerdict:
    D1: Verdict
    D2: Verdict
    D3prime: Verdict
    H3: Verdict

    @property
    def overall(self) -> bool:
        return all(v.passed for v in (self.D1, self.D2, self.D3prime, self.H3))

    def to_dict(self) -> dict:
        out = {k: {"status": v.status, **v.witness} for k, v in
               (("D1", self.D1), ("D2", self.D2), ("D3prime", self.D3prime), ("H3", self.H3))}
        out["overall"] = self.overall
        return out

    def to_json(self, path):
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))
        tmp.replace(path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (complex, np.complexfloating)):
        return {"re": float(np.real(o)), "im": float(np.imag(o))}
    if isinstance(o, (np.integer, np.floating, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _classify(value: float, tol: float, good_if_negative: bool = True) -> str:
    if abs(value) <= tol:
        return "marginal"
    return "pass" if (value < 0) == good_if_negative else "fail"


def fit_radius(spectrum: BlochSpectrum) -> float:
    """min(0.2 pi/X, half the distance to the first crossing of a critical branch)."""
    b = 0.2 * np.pi / spectrum.period
    crit = spectrum.critical
    others = [j for j in range(spectrum.surfaces.shape[1]) if j not in crit]
    if others:
        xs = spectrum.xi_grid
        lowest_crit = np.min(spectrum.surfaces[:, crit].real, axis=1)
        top_other = np.max(spectrum.surfaces[:, others].real, axis=1)
        crossing = np.abs(xs[(top_other >= lowest_crit) & (xs != 0)])
        if crossing.size:
            b = min(b, 0.5 * float(crossing.min()))
    return b


def stability_verdict(spectrum: BlochSpectrum, jordan: JordanStructure | None, n: int,
                      tol: float = 1e-8, xi_fit: float | None = None) -> StabilityVerdict:
    """(D1) on |xi| >= xi_fit, (D2) on 0 < |xi| <= xi_fit, (D3') from the Jordan count, (H3)."""
    xs = spectrum.xi_grid
    S = spectrum.surfaces
    xi_fit = fit_radius(spectrum) if xi_fit is None else xi_fit
    outer = np.abs(xs) >= xi_fit
    if outer.any():
        re = np.nanmax(S[outer].real, axis=1)
        k = int(np.argmax(re))
        d1 = Verdict(_classify(float(re[k]), tol), {"max_re": float(re[k]), "argmax_xi": float(xs[outer][k]),
                                                     "xi_min": float(xi_fit)})
    else:
        d1 = Verdict("marginal", {"max_re": float("nan"), "argmax_xi": float("nan"), "xi_min": float(xi_fit)})
    inner_mask = (np.abs(xs) <= xi_fit) & (xs != 0)
    crit = spectrum.critical
    if inner_mask.any():
        ratios = -S[inner_mask][:, crit].real / xs[inner_mask, None] ** 2
        theta = float(np.nanmin(ratios))
        d2 = Verdict(_classify(-theta, tol), {"theta": theta, "fit_range": [0.0, float(xi_fit)]})
    else:
        d2 = Verdict("marginal", {"theta": float("nan"), "fit_range": [0.0, float(xi_fit)]})
    if jordan is None:
        i0 = int(np.flatnonzero(xs == 0.0)[0])
        mult = int(np.sum(np.abs(S[i0]) < 1e-6))
    else:
        mult = jordan.multiplicity
    d3 = Verdict("pass" if mult == n + 1 else "fail", {"multiplicity": mult, "expected": n + 1})
    pos = np.sort(xs[xs > 0])
    if pos.size >= 2:
        x1, x2 = pos[0], pos[1]
        i1, i2 = np.flatnonzero(xs == x1)[0], np.flatnonzero(xs == x2)[0]
        d1q = 1j * S[i1, crit] / x1
        d2q = 1j * S[i2, crit] / x2
        # first-order Richardson on a geometric pair removes the O(xi) term
        a = (x2 * d1q - x1 * d2q) / (x2 - x1)
        gaps = [abs(a[i] - a[j]) for i in range(len(a)) for j in range(i + 1, len(a))]
        gap = float(min(gaps)) if gaps else float("nan")
        h3 = Verdict(_classify(-gap, 1e-6), {"min_gap": gap, "a": [complex(v) for v in a]})
    else:
        h3 = Verdict("marginal", {"min_gap": float("nan"), "a": []})
    return StabilityVerdict(d1, d2, d3, h3)

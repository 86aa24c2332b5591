"""Linearised evolution e^{Lt} on m periods through the Bloch channels.

Fields on [0, mX) are split into the m quasimomentum channels xi_j = 2 pi j/(mX);
each channel is an X-periodic field advanced by the matrix exponential of its
Galerkin Bloch matrix. Channel Nyquist modes are discarded, so inputs should be
band-limited (smooth) for identities at the 1e-12 level.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .bloch import (BlochTransform, JordanStructure, StabilityVerdict, bloch_matrix, bloch_transform,
                    coeffs_to_field, field_to_coeffs, inverse_bloch_transform)
from .errors import ClusterError, GateError
from .lowfreq import _cluster_bases, _zero_bases, build_dual_bases
from .numerics import PeriodicGrid, RateFit, SpectralField, fit_algebraic_decay, fit_exponential_rate, fourier_diff
from .profile import ProfileSolution, CONSTANT_TOL


def smooth_step(r):
    """C-infinity step: 0 for r <= 0, 1 for r >= 1."""
    r = np.asarray(r, dtype=float)
    out = np.where(r >= 1, 1.0, 0.0)
    mid = (r > 0) & (r < 1)
    rm = r[mid]
    with np.errstate(over="ignore"):  # 1/rm overflows for subnormal rm; exp(-inf) = 0 is right
        a = np.exp(-1.0 / rm)
        b = np.exp(-1.0 / (1.0 - rm))
    out[mid] = a / (a + b)
    return out if out.ndim else float(out)


def smooth_step_derivative(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    mid = (r > 0) & (r < 1)
    rm = r[mid]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        a = np.exp(-1.0 / rm)
        b = np.exp(-1.0 / (1.0 - rm))
        val = a * b * (1 / rm ** 2 + 1 / (1 - rm) ** 2) / (a + b) ** 2
    out[mid] = np.nan_to_num(val, nan=0.0)
    return out if out.ndim else float(out)


def frequency_cutoff(xi, eps: float):
    """1 for |xi| <= eps, 0 for |xi| >= 2 eps."""
    return 1.0 - smooth_step((np.abs(xi) - eps) / eps)


def time_cutoff(t):
    """0 for t <= 1, 1 for t >= 2."""
    return smooth_step(np.asarray(t, dtype=float) - 1.0)


def time_cutoff_derivative(t):
    return smooth_step_derivative(np.asarray(t, dtype=float) - 1.0)


@dataclass
class SemigroupSampler:
    profile: ProfileSolution
    multiple: int
    N: int
    xis: np.ndarray
    matrices: list
    jordan: JordanStructure | None = None
    epsilon: float | None = None
    jobs: int = 1
    _low: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def period(self) -> float:
        return self.profile.period

    @property
    def n(self) -> int:
        return self.profile.n

    @property
    def domain(self) -> PeriodicGrid:
        return PeriodicGrid(self.multiple * self.N, self.multiple * self.period)

    @property
    def low_channels(self) -> list[int]:
        if self.epsilon is None:
            return []
        return [j for j, x in enumerate(self.xis) if abs(x) < 2 * self.epsilon]

    # --- representation ---------------------------------------------------------------

    def to_channels(self, u: SpectralField) -> np.ndarray:
        if u.grid.num_points != self.multiple * self.N:
            u = u.resample(self.multiple * self.N)
        bt = bloch_transform(u, self.period)
        return np.stack([field_to_coeffs(ch, self.N) for ch in bt.channels])

    def from_channels(self, C: np.ndarray) -> SpectralField:
        chans = tuple(coeffs_to_field(c, self.n, self.period, self.N) for c in C)
        return inverse_bloch_transform(BlochTransform(self.xis, chans, self.period, self.multiple))

    def _map(self, fn, items):
        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as ex:
                return list(ex.map(fn, items))
        return [fn(i) for i in items]

    def propagator(self, j: int, t: float) -> np.ndarray:
        key = (j, float(t))
        if key not in self._cache:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = sla.expm(self.matrices[j] * t)
        return self._cache[key]

    # --- low-frequency data -------------------------------------------------------------

    def low_data(self, j: int):
        """(P, V, V~, M) for a channel inside the cutoff support."""
        if j not in self._low:
            if self.jordan is None:
                raise ClusterError("no Jordan data: low-frequency split unavailable")
            b = build_dual_bases(self.profile, self.jordan, float(self.xis[j]), want_projector=True,
                                 zero_bases=self._zero)
            M = self.period * b.V_tilde.conj().T @ self.matrices[j] @ b.V
            self._low[j] = (b.projector, b.V, b.V_tilde, M)
        return self._low[j]

    def cutoff(self) -> np.ndarray:
        if self.epsilon is None:
            return np.zeros(self.xis.size)
        return frequency_cutoff(self.xis, self.epsilon)


def make_sampler(profile: ProfileSolution, multiple: int = 64, N: int | None = None,
                 jordan: JordanStructure | None = None, epsilon: float | None = None,
                 jobs: int = 1) -> SemigroupSampler:
    """Assemble the channel matrices; with ``jordan`` the low-frequency split is enabled.

    epsilon defaults to half the largest channel |xi| up to which the critical group
    stays separated (capped at 0.2 pi/X).
    """
    N = N or profile.num_points
    X = profile.period
    if multiple < 1:
        raise ValueError("multiple must be a positive integer")
    labels = np.arange(-((multiple - 1) // 2), multiple // 2 + 1)
    xis = 2 * np.pi * labels / (multiple * X)
    with ThreadPoolExecutor(max(1, jobs)) as ex:
        mats = list(ex.map(lambda x: bloch_matrix(profile, x, N), xis))
    s = SemigroupSampler(profile, multiple, N, xis, mats, jordan, None, jobs)
    if jordan is not None:
        if jordan.N != N:
            raise ValueError(f"Jordan data computed at N = {jordan.N}, sampler uses N = {N}")
        s._zero = _zero_bases(profile, jordan)
        if epsilon is None:
            sep = 0.0
            for x in np.sort(np.abs(xis[xis > 0])):
                try:
                    _cluster_bases(bloch_matrix(profile, x, N), profile.n + 1, sep_ratio=4.0)
                    sep = x
                except ClusterError:
                    break
            epsilon = min(0.5 * sep, 0.2 * np.pi / X)
            if epsilon <= 0:
                raise ClusterError("critical group not separated on any nonzero channel; increase the multiple")
        s.epsilon = float(epsilon)
        for j in s.low_channels:
            s.low_data(j)
    else:
        s._zero = None
    return s


# --- semigroup action ------------------------------------------------------------------

def _propagate(sampler: SemigroupSampler, C: np.ndarray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return C.copy()
    out = sampler._map(lambda j: sampler.propagator(j, t) @ C[j], range(len(sampler.xis)))
    return np.stack(out)


def apply_semigroup(sampler: SemigroupSampler, u0: SpectralField, t: float) -> SpectralField:
    return sampler.from_channels(_propagate(sampler, sampler.to_channels(u0), t))


def apply_generator(sampler: SemigroupSampler, u: SpectralField) -> SpectralField:
    C = sampler.to_channels(u)
    return sampler.from_channels(np.stack([sampler.matrices[j] @ C[j] for j in range(len(sampler.xis))]))


def split_low_high(sampler: SemigroupSampler, u0: SpectralField, t: float):
    """(S_I u0, S_II u0) with S_I = phi(xi) P(xi) e^{L_xi t} and S_II the complement."""
    C = _propagate(sampler, sampler.to_channels(u0), t)
    phi = sampler.cutoff()
    low = np.zeros_like(C)
    for j in sampler.low_channels:
        P = sampler.low_data(j)[0]
        low[j] = phi[j] * (P @ C[j])
    return sampler.from_channels(low), sampler.from_channels(C - low)


def discrete_delta(sampler: SemigroupSampler, y_index: int, component: int = 0) -> SpectralField:
    g = sampler.domain
    vals = np.zeros((sampler.n, g.num_points))
    vals[component, y_index] = 1.0 / g.spacing
    return SpectralField(g, vals)


def comoving_derivative_profile(sampler: SemigroupSampler) -> SpectralField:
    """u-bar' extended periodically to the m-period domain."""
    d = sampler.profile.derivative
    if d.grid.num_points != sampler.N:
        d = d.resample(sampler.N)
    return SpectralField(sampler.domain, np.tile(np.real(d.values), (1, sampler.multiple)))


# --- Green columns and the e-kernel --------------------------------------------------------

@dataclass(frozen=True)
class GreenSplit:
    t: float
    y0: float
    component: int
    G_column: SpectralField
    E_part: SpectralField
    G_tilde: SpectralField
    e_column: SpectralField
    chi_cutoff: float
    extras: dict = field(default_factory=dict)


def _e_channels(sampler: SemigroupSampler, C0: np.ndarray, t: float, derivative: bool = False) -> np.ndarray:
    """phi(xi_j) [e^{M_j t} X V~_j^H c_j]_n per channel (or its t-derivative without the chi factor)."""
    n = sampler.n
    out = np.zeros(len(sampler.xis), dtype=complex)
    phi = sampler.cutoff()
    for j in sampler.low_channels:
        _, V, Vt, M = sampler.low_data(j)
        y = sampler.period * Vt.conj().T @ C0[j]
        E = sla.expm(M * t)
        z = (M @ E @ y) if derivative else (E @ y)
        out[j] = phi[j] * z[n - 1]
    return out


def _scalar_from_channels(sampler: SemigroupSampler, amps: np.ndarray) -> SpectralField:
    """(1/(mX)) sum_j exp(i xi_j x) a_j on the m-period domain."""
    g = sampler.domain
    x = g.nodes
    vals = (np.exp(1j * np.outer(x, sampler.xis)) @ amps) / (sampler.multiple * sampler.period)
    return SpectralField(g, vals[None, :])


def e_kernel(sampler: SemigroupSampler, source: SpectralField, t: float, want_derivatives: bool = False):
    """e(x, t) for initial data ``source`` (a discrete delta for Green columns)."""
    chi = float(time_cutoff(t))
    C0 = sampler.to_channels(source)
    if sampler.jordan is None:
        raise ClusterError("e-kernel needs the low-frequency split")
    amps = _e_channels(sampler, C0, t)
    e = _scalar_from_channels(sampler, chi * amps)
    if not want_derivatives:
        return e, {}
    dchi = float(time_cutoff_derivative(t))
    damps = _e_channels(sampler, C0, t, derivative=True)
    e_t = _scalar_from_channels(sampler, dchi * amps + chi * damps)
    e_x = fourier_diff(e, 1)
    return e, {"e_t": e_t, "e_x": e_x}


def green_column(sampler: SemigroupSampler, y_index: int, t: float, component: int = 0,
                 want_derivatives: bool = False) -> GreenSplit:
    """Column G(., t; y) for a discrete delta at node ``y_index`` and its split G = u-bar' e + G~."""
    if t <= 0:
        raise ValueError("t must be positive")
    dom = sampler.domain
    width = np.sqrt(t)
    dxi = 2 * np.pi / (sampler.multiple * sampler.period)
    if dxi * width > 2.0 or 4 * np.sqrt(t) > 0.5 * dom.period:
        warnings.warn(f"xi grid / domain under-resolves the diffusive width at t = {t}", RuntimeWarning,
                      stacklevel=2)
    delta = discrete_delta(sampler, y_index, component)
    C0 = sampler.to_channels(delta)
    Ct = _propagate(sampler, C0, t)
    G = sampler.from_channels(Ct)
    extras = {}
    if sampler.jordan is not None:
        e, ed = e_kernel(sampler, delta, t, want_derivatives)
        du = comoving_derivative_profile(sampler)
        E = SpectralField(dom, du.values * e.values[0])
        extras.update(ed)
    else:
        e = SpectralField(dom, np.zeros((1, dom.num_points)))
        E = SpectralField(dom, np.zeros_like(G.values))
    if want_derivatives:
        nch = len(sampler.xis)
        extras["G_t"] = sampler.from_channels(np.stack([sampler.matrices[j] @ Ct[j] for j in range(nch)]))
        ddelta = fourier_diff(delta, 1)
        extras["G_y"] = -apply_semigroup(sampler, ddelta, t)
        if sampler.jordan is not None:
            ey, _ = e_kernel(sampler, ddelta, t)
            extras["e_y"] = -ey
            Ey = SpectralField(dom, comoving_derivative_profile(sampler).values * extras["e_y"].values[0])
            extras["G_tilde_y"] = extras["G_y"] - Ey
            Et = SpectralField(dom, comoving_derivative_profile(sampler).values * extras["e_t"].values[0])
            extras["G_tilde_t"] = extras["G_t"] - Et
    return GreenSplit(float(t), float(dom.nodes[y_index]), component, G, E, G - E, e,
                      float(time_cutoff(t)), extras)


def periodized_gaussian(x: np.ndarray, t: float, length: float, y: float = 0.0, images: int = 10) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    for k in range(-images, images + 1):
        out += np.exp(-(x - y - k * length) ** 2 / (4 * t))
    return out / np.sqrt(4 * np.pi * t)


# --- decay verification -------------------------------------------------------------------

def _lp(f: SpectralField, p: float) -> float:
    if np.isinf(p):
        return f.sup_norm()
    return float((f.grid.spacing * np.sum(np.abs(f.values) ** p)) ** (1.0 / p))


def _is_constant_coefficient(profile: ProfileSolution) -> bool:
    v = np.real(profile.profile.values)
    return bool(np.max(np.abs(v - v.mean(axis=1, keepdims=True))) <= CONSTANT_TOL)


def require_gate(sampler: SemigroupSampler, verdict: StabilityVerdict | None):
    if _is_constant_coefficient(sampler.profile):
        return
    if verdict is None or not verdict.overall:
        raise GateError("not applicable: wave unstable (spectral gate not passed)")


@dataclass(frozen=True)
class DecayReport:
    fits: dict
    series: dict
    times: np.ndarray


def verify_green_decay(sampler: SemigroupSampler, times: Sequence[float], p_exponents=(2.0, np.inf),
                       verdict: StabilityVerdict | None = None, y_indices: Sequence[int] | None = None,
                       window: tuple[float, float] | None = None, derivatives: bool = True) -> DecayReport:
    """Fit decay exponents of sup_y ||G~(., t; y)||_{L^p} and the e-kernel family.

    Gated on the stability verdict unless the operator has constant coefficients
    (the heat-kernel baseline).
    """
    require_gate(sampler, verdict)
    times = np.asarray(times, dtype=float)
    if y_indices is None:
        y_indices = [sampler.domain.num_points // 2]
    window = window or (float(times[0]), float(times[-1]))
    keys = [f"G_tilde_L{p}" for p in p_exponents]
    if derivatives and sampler.jordan is not None:
        keys += [f"G_tilde_y_L{p}" for p in p_exponents] + [f"G_tilde_t_L{p}" for p in p_exponents]
        keys += ["e_Linf", "e_x_Linf", "e_t_Linf", "e_y_Linf", "e_x_L2", "e_t_L2"]
    series = {k: np.zeros(times.size) for k in keys}
    for i, t in enumerate(times):
        for y in y_indices:
            for c in range(sampler.n):
                gs = green_column(sampler, y, t, c, want_derivatives=derivatives and sampler.jordan is not None)
                vals = {}
                for p in p_exponents:
                    vals[f"G_tilde_L{p}"] = _lp(gs.G_tilde, p)
                    if "G_tilde_y" in gs.extras:
                        vals[f"G_tilde_y_L{p}"] = _lp(gs.extras["G_tilde_y"], p)
                        vals[f"G_tilde_t_L{p}"] = _lp(gs.extras["G_tilde_t"], p)
                if "e_x" in gs.extras:
                    vals["e_Linf"] = gs.e_column.sup_norm()
                    vals["e_x_Linf"] = gs.extras["e_x"].sup_norm()
                    vals["e_t_Linf"] = gs.extras["e_t"].sup_norm()
                    vals["e_y_Linf"] = gs.extras["e_y"].sup_norm()
                    vals["e_x_L2"] = _lp(gs.extras["e_x"], 2)
                    vals["e_t_L2"] = _lp(gs.extras["e_t"], 2)
                for k, v in vals.items():
                    series[k][i] = max(series[k][i], v)
    fits = {}
    for k, y in series.items():
        try:
            fits[k] = fit_algebraic_decay(times, y, window)
        except ValueError as exc:
            warnings.warn(f"fit for {k} skipped: {exc}", RuntimeWarning, stacklevel=2)
    return DecayReport(fits, series, times)


def high_frequency_decay(sampler: SemigroupSampler, u0: SpectralField, times: Sequence[float],
                         verdict: StabilityVerdict | None = None) -> tuple[RateFit, np.ndarray]:
    """Log-linear fit of ||S_II(t) u0||_2; gated on the stability verdict."""
    require_gate(sampler, verdict)
    times = np.asarray(times, dtype=float)
    norms = np.array([split_low_high(sampler, u0, t)[1].l2_norm() for t in times])
    return fit_exponential_rate(times, norms, (float(times[0]), float(times[-1]))), norms


def high_frequency_gap(sampler: SemigroupSampler) -> float:
    """-max Re of the spectrum left after removing the critical group inside the cutoff."""
    worst = -np.inf
    phi = sampler.cutoff()
    for j, L in enumerate(sampler.matrices):
        lam = np.linalg.eigvals(L)
        if j in sampler.low_channels and phi[j] == 1.0:
            lam = lam[np.argsort(np.abs(lam))][sampler.n + 1:]
        worst = max(worst, float(np.max(lam.real)))
    return -worst


def derivative_envelope(sampler: SemigroupSampler, u0: SpectralField, times: Sequence[float], theta: float):
    """Smallest C with ||d_x S_II(t) u0|| <= C t^{-1/2} e^{-theta t} ||u0|| on the sampled times."""
    times = np.asarray(times, dtype=float)
    nrm = u0.l2_norm()
    ratios = []
    for t in times:
        _, hi = split_low_high(sampler, u0, t)
        d = fourier_diff(SpectralField(hi.grid, hi.values), 1).l2_norm()
        ratios.append(d / (nrm * t ** -0.5 * np.exp(-theta * t)))
    return float(np.max(ratios)), np.array(ratios)


# --- cancellation principle ------------------------------------------------------------------

@dataclass(frozen=True)
class CancellationReport:
    residual: float
    lhs: SpectralField
    target: SpectralField
    nodes: int


def verify_cancellation(sampler: SemigroupSampler, f: Callable[[float], SpectralField],
                        f_s: Callable[[float], SpectralField], t: float = 1.0, nodes: int = 64
                        ) -> CancellationReport:
    """int_0^t e^{L(t-s)} (d_s - L) f(s) ds against f(t), Gauss-Legendre in s."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s_nodes = 0.5 * t * (x + 1)
    w = 0.5 * t * w
    acc = None
    for s, ws in zip(s_nodes, w):
        src = f_s(s) - apply_generator(sampler, f(s))
        term = apply_semigroup(sampler, src, t - s) * ws
        acc = term if acc is None else acc + term
    target = f(t)
    if acc is None:
        acc = target * 0.0
    denom = target.l2_norm()
    diff = (acc - target).l2_norm()
    res = diff / denom if denom > 0 else diff
    return CancellationReport(float(res), acc, target, nodes)


def time_stepper_reference(sampler: SemigroupSampler, u0: SpectralField, t: float) -> SpectralField:
    """Method-of-lines integration of v_t = v_xx - ((A - s) v)_x on the full domain (oracle)."""
    from scipy.integrate import solve_ivp

    dom = sampler.domain
    prof = sampler.profile
    A = np.asarray(prof.system.jacobian(np.real(np.tile(
        (prof.profile.resample(sampler.N) if prof.num_points != sampler.N else prof.profile).values,
        (1, sampler.multiple)))))
    A = A - prof.speed * np.eye(prof.n)[:, :, None]
    k = dom.wavenumbers
    n = prof.n

    def rhs(_, y):
        v = y.reshape(n, -1)
        flux = np.einsum("ijx,jx->ix", A, v)
        vh = np.fft.fft(v, axis=-1)
        fh = np.fft.fft(flux, axis=-1)
        out = np.fft.ifft(-(k ** 2) * vh - 1j * k * fh, axis=-1)
        return out.ravel()

    y0 = np.asarray(u0.values, dtype=complex).ravel()
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    return SpectralField(dom, sol.y[:, -1].reshape(n, -1))

"""Shared numerics: periodic grids, Fourier differentiation, dense eigensolves,
numerical rank and decay-rate fitting.

Everything here is a pure function of its inputs; the dataclasses are frozen and
safe to share between worker threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError


@dataclass(frozen=True)
class PeriodicGrid:
    num_points: int
    period: float

    def __post_init__(self):
        if self.num_points <= 0 or self.num_points % 2:
            raise ValueError(f"num_points must be a positive even integer, got {self.num_points}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.num_points) * (self.period / self.num_points)

    @property
    def spacing(self) -> float:
        return self.period / self.num_points

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers 2*pi*k/period in FFT ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.num_points, d=1.0 / self.num_points) / self.period

    def with_points(self, num_points: int) -> "PeriodicGrid":
        return PeriodicGrid(num_points, self.period)


@dataclass(frozen=True)
class SpectralField:
    """Samples of an n-component periodic function on a PeriodicGrid.

    ``values`` has shape (n, num_points). Real input stays real.
    """

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.shape[-1] != self.grid.num_points:
            raise ValueError(f"values have {vals.shape[-1]} points, grid has {self.grid.num_points}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, func) -> "SpectralField":
        return cls(grid, np.atleast_2d(func(grid.nodes)))

    @classmethod
    def from_coefficients(cls, grid: PeriodicGrid, coeffs: np.ndarray, real: bool = False) -> "SpectralField":
        vals = np.fft.ifft(np.atleast_2d(coeffs), axis=-1) * grid.num_points
        return cls(grid, vals.real if real else vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def period(self) -> float:
        return self.grid.period

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def coefficients(self) -> np.ndarray:
        """Fourier coefficients c_k with f(x) = sum_k c_k exp(2 pi i k x / X)."""
        return np.fft.fft(self.values, axis=-1) / self.grid.num_points

    def resample(self, num_points: int) -> "SpectralField":
        """Trigonometric interpolation onto a grid with ``num_points`` nodes."""
        N = self.grid.num_points
        if num_points == N:
            return self
        c = self.coefficients()
        out = np.zeros((self.n, num_points), dtype=complex)
        kmax = min(N, num_points) // 2
        out[:, :kmax] = c[:, :kmax]
        out[:, -kmax + 1:] = c[:, -kmax + 1:]
        if num_points > N:
            # split the old Nyquist coefficient symmetrically
            out[:, kmax] = 0.5 * c[:, kmax]
            out[:, -kmax] = 0.5 * c[:, kmax]
        real = not np.iscomplexobj(self.values)
        return SpectralField.from_coefficients(self.grid.with_points(num_points), out, real=real)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate the trigonometric interpolant at arbitrary points; shape (n, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        N = self.grid.num_points
        c = self.coefficients()
        k = np.fft.fftfreq(N, d=1.0 / N)
        # symmetric treatment of the Nyquist mode keeps real data real
        weights = np.ones(N)
        weights[N // 2] = 0.5
        phase = np.exp(2j * np.pi * np.outer(k, x) / self.period)
        vals = (c * weights) @ phase
        nyq = c[:, N // 2:N // 2 + 1] * 0.5 * np.exp(2j * np.pi * (N // 2) * x / self.period)
        vals = vals + nyq
        return vals.real if not np.iscomplexobj(self.values) else vals

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.spacing * np.sum(np.abs(self.values) ** 2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        return SpectralField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return SpectralField(self.grid, self.values - _vals(other))

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.values)


def _vals(other):
    return other.values if isinstance(other, SpectralField) else other


def coefficient_l2_norm(f: SpectralField) -> float:
    """L2 norm over one period computed from Fourier coefficients (Parseval)."""
    return float(np.sqrt(f.period * np.sum(np.abs(f.coefficients()) ** 2)))


def _check_finite(f: SpectralField):
    if not f.is_finite():
        raise ValueError("field contains non-finite entries")


ROUNDOFF_FLOOR = 1e-15


def fourier_diff(f: SpectralField, order: int = 1, floor: float = ROUNDOFF_FLOOR) -> SpectralField:
    """Spectral derivative of the given order (0 <= order <= 4).

    Coefficients below ``floor`` times the largest one (per component) are treated
    as roundoff and dropped, so that k^order does not amplify them.
    """
    if order < 0 or order > 4:
        raise ValueError(f"derivative order must be in 0..4, got {order}")
    _check_finite(f)
    if order == 0:
        return f
    k = f.grid.wavenumbers.copy()
    if order % 2:
        k[f.grid.num_points // 2] = 0.0
    mult = (1j * k) ** order
    c = np.fft.fft(f.values, axis=-1)
    if floor > 0:
        mag = np.abs(c)
        c = np.where(mag < floor * mag.max(axis=-1, keepdims=True), 0.0, c)
    out = np.fft.ifft(c * mult, axis=-1)
    return SpectralField(f.grid, out if np.iscomplexobj(f.values) else out.real)


def antiderivative(f: SpectralField) -> SpectralField:
    """Mean-zero antiderivative of a mean-zero field."""
    _check_finite(f)
    c = np.fft.fft(f.values, axis=-1)
    k = f.grid.wavenumbers.copy()
    k[0] = 1.0
    out = c / (1j * k)
    out[:, 0] = 0.0
    out[:, f.grid.num_points // 2] = 0.0
    vals = np.fft.ifft(out, axis=-1)
    return SpectralField(f.grid, vals if np.iscomplexobj(f.values) else vals.real)


def periodic_average(f: SpectralField) -> np.ndarray:
    """(1/X) * integral over one period, from the zeroth Fourier coefficient."""
    _check_finite(f)
    return np.mean(f.values, axis=-1)


@dataclass(frozen=True)
class EigResult:
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray | None
    residual_norms: np.ndarray
    biorthogonality_error: float
    ill_conditioned: bool = False


def eig_dense(A: np.ndarray, want_left: bool = False) -> EigResult:
    """Full eigendecomposition with residuals.

    With ``want_left`` the left vectors are scaled so that w_j^H v_j = 1; the
    biorthogonality error is max |W^H V - I|. Defective matrices yield a huge
    (possibly infinite) error and ``ill_conditioned=True``.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("eig_dense needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        if want_left:
            lam, W, V = sla.eig(A, left=True, right=True)
        else:
            lam, V = sla.eig(A)
            W = None
    except sla.LinAlgError as exc:
        raise ConvergenceError(f"dense eigensolver did not converge: {exc}") from exc
    res = np.linalg.norm(A @ V - V * lam, axis=0) / np.linalg.norm(V, axis=0)
    biorth = 0.0
    ill = False
    if want_left:
        d = np.einsum("ij,ij->j", W.conj(), V)
        with np.errstate(divide="ignore", invalid="ignore"):
            W = W / d.conj()
            G = W.conj().T @ V
            biorth = float(np.max(np.abs(G - np.eye(len(lam)))))
        if not np.isfinite(biorth) or np.min(np.abs(d)) < 1e-14:
            biorth = float("inf")
        if biorth > 1e-6:
            ill = True
            warnings.warn(f"eigenvector basis ill-conditioned (biorthogonality error {biorth:.2e})",
                          RuntimeWarning, stacklevel=2)
    return EigResult(lam, V, W, res, biorth, ill)


def numeric_rank(A: np.ndarray, tol: float = 1e-8) -> tuple[int, np.ndarray]:
    """Rank = number of singular values above ``tol`` times the largest one."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    sv = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > tol * sv[0])), sv


@dataclass(frozen=True)
class RateFit:
    exponent: float
    log_prefactor: float
    fit_window: tuple[float, float]
    goodness: float
    boundedness_ratio: float
    num_samples: int = 0
    extra: dict = field(default_factory=dict)


def _window(t, y, window, min_samples):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("series must be 1-d and of equal length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    tmin, tmax = window
    mask = (t >= tmin) & (t <= tmax)
    if mask.sum() < min_samples:
        raise ValueError(f"fit window holds {mask.sum()} samples, need at least {min_samples}")
    return t[mask], y[mask]


def _r_squared(resid, z):
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    if ss_tot <= 1e-300:
        return 1.0 if ss_res <= 1e-20 * max(1.0, float(np.sum(z ** 2))) else 0.0
    return float(np.clip(1.0 - ss_res / ss_tot, 0.0, 1.0))


def fit_algebraic_decay(t, y, window: tuple[float, float]) -> RateFit:
    """Least-squares fit of log y against log(1+t) on the window."""
    tw, yw = _window(t, y, window, 8)
    if (1 + tw[-1]) / (1 + tw[0]) < 10 * (1 - 1e-12):
        raise ValueError("fit window must span at least one decade in (1+t)")
    if np.any(yw <= 0):
        raise ValueError("series must be positive on the fit window")
    s = np.log1p(tw)
    z = np.log(yw)
    slope, intercept = np.polyfit(s, z, 1)
    resid = z - (slope * s + intercept)
    first = (1 + tw) <= 10 * (1 + tw[0])
    last = (1 + tw) >= (1 + tw[-1]) / 10
    ratio = float(np.max(yw[last]) / np.max(yw[first]))
    return RateFit(float(slope), float(intercept), (float(tw[0]), float(tw[-1])),
                   _r_squared(resid, z), ratio, int(tw.size))


def fit_exponential_rate(t, y, window: tuple[float, float]) -> RateFit:
    """Least-squares fit of log y against t; ``exponent`` is the rate."""
    tw, yw = _window(t, y, window, 4)
    if np.any(yw <= 0):
        raise ValueError("series must be positive on the fit window")
    z = np.log(yw)
    slope, intercept = np.polyfit(tw, z, 1)
    resid = z - (slope * tw + intercept)
    ratio = float(yw[-1] / yw[0])
    return RateFit(float(slope), float(intercept), (float(tw[0]), float(tw[-1])),
                   _r_squared(resid, z), ratio, int(tw.size))


def csv_float(v) -> str:
    """Scientific notation with 17 significant digits (round-trips every double)."""
    return f"{float(v):.16e}"

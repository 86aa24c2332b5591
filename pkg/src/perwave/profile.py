"""Periodic traveling-wave profiles: u' = f(u) - s u - q on an unknown period.

The boundary-value problem is posed on the unit cell tau in [0, 1) with x = X tau,
discretised by Fourier collocation and solved by Newton's method together with
whichever of (X, s, q_1..q_n) are declared free.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, ContinuationError, ProfileError
from .model import FluxSystem, make_system
from .numerics import PeriodicGrid, SpectralField, csv_float, fourier_diff, numeric_rank

CONSTANT_TOL = 1e-6


@dataclass(frozen=True)
class ProfileSolution:
    system: FluxSystem
    period: float
    speed: float
    flux_constant: np.ndarray
    profile: SpectralField
    derivative: SpectralField
    residual: float
    free: tuple[str, ...] = ("X",)
    amplitude: float | None = None
    phase_component: int = 0

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def num_points(self) -> int:
        return self.profile.grid.num_points

    @property
    def base_point(self) -> np.ndarray:
        return np.real(self.profile.values[:, 0]).copy()

    def ode_rhs(self, u: np.ndarray) -> np.ndarray:
        q = self.flux_constant.reshape((-1,) + (1,) * (np.ndim(u) - 1))
        return self.system.flux(u) - self.speed * u - q

    def param(self, name: str) -> float:
        if name == "X":
            return self.period
        if name == "s":
            return self.speed
        if name == "amplitude":
            return float("nan") if self.amplitude is None else self.amplitude
        return float(self.flux_constant[_q_index(name, self.n)])

    def header(self) -> dict:
        return {
            "system": self.system.name,
            "parameters": {k: v for k, v in self.system.parameters.items()},
            "X": self.period,
            "s": self.speed,
            "q": [float(v) for v in self.flux_constant],
            "N": self.num_points,
            "residual": self.residual,
            "free": list(self.free),
            "amplitude": self.amplitude,
            "phase_component": self.phase_component,
        }


def _q_index(name: str, n: int) -> int:
    if not name.startswith("q"):
        raise ValueError(f"unknown profile parameter {name!r}")
    i = int(name[1:]) - 1
    if not 0 <= i < n:
        raise ValueError(f"flux constant index out of range in {name!r}")
    return i


def profile_residual(system: FluxSystem, profile: SpectralField, s: float, q) -> float:
    """max |u' - (f(u) - s u - q)| on the grid."""
    u = np.real(profile.values)
    du = fourier_diff(SpectralField(profile.grid, u), 1).values
    rhs = system.flux(u) - s * u - np.asarray(q, dtype=float)[:, None]
    return float(np.max(np.abs(du - rhs)))


def make_solution(system, period, speed, q, values, **kw) -> ProfileSolution:
    grid = PeriodicGrid(values.shape[-1], float(period))
    prof = SpectralField(grid, np.asarray(values, dtype=float))
    q = np.asarray(q, dtype=float)
    res = profile_residual(system, prof, speed, q)
    return ProfileSolution(system, float(period), float(speed), q, prof, fourier_diff(prof, 1), res, **kw)


def constant_state(system: FluxSystem, state, num_points: int = 64, period: float = 2 * np.pi,
                   speed: float = 0.0) -> ProfileSolution:
    """A constant solution u = c with q = f(c) - s c; a degenerate input for diagnostics."""
    c = np.asarray(state, dtype=float)
    q = system.flux(c) - speed * c
    vals = np.repeat(c[:, None], num_points, axis=1)
    return make_solution(system, period, speed, q, vals)


def _diff_matrix(N: int) -> np.ndarray:
    """Fourier differentiation matrix on the unit cell (Nyquist mode dropped)."""
    k = 2 * np.pi * np.fft.fftfreq(N, d=1.0 / N)
    k[N // 2] = 0.0
    E = np.fft.fft(np.eye(N), axis=0)
    return np.real(np.fft.ifft(1j * k[:, None] * E, axis=0))


def _max_to_origin(values: np.ndarray, component: int) -> np.ndarray:
    """Translate samples so that the maximum of one component sits at node 0."""
    grid = PeriodicGrid(values.shape[-1], 1.0)
    f = SpectralField(grid, values)
    xs = np.linspace(0, 1, 8 * values.shape[-1], endpoint=False)
    fine = f.evaluate(xs)[component]
    x0 = xs[int(np.argmax(fine))]
    # local refinement of the maximum location by Newton on the derivative
    df = fourier_diff(f, 1)
    d2f = fourier_diff(f, 2)
    for _ in range(20):
        step = df.evaluate([x0])[component, 0] / d2f.evaluate([x0])[component, 0]
        x0 -= step
        if abs(step) < 1e-15:
            break
    c = f.coefficients()
    kk = np.fft.fftfreq(values.shape[-1], d=1.0 / values.shape[-1])
    shifted = c * np.exp(2j * np.pi * kk * x0)
    shifted[:, values.shape[-1] // 2] = c[:, values.shape[-1] // 2].real * np.cos(np.pi * values.shape[-1] * x0)
    return np.real(np.fft.ifft(shifted, axis=-1) * values.shape[-1])


def solve_profile_bvp(system: FluxSystem, guess: SpectralField, s: float, q,
                      phase_condition: str = "max-at-zero", free: Sequence[str] = ("X",),
                      amplitude: float | None = None, phase_component: int = 0,
                      tol: float = 1e-12, max_iter: int = 60, align_guess: bool = True) -> ProfileSolution:
    """Newton-collocation solve for a periodic profile.

    ``guess`` carries its period in its grid. ``free`` names the scalar unknowns
    among "X", "s", "q1".."qn"; it must hold one name more than the number of
    extra constraints (the amplitude constraint u_c(0) = amplitude counts as one).
    """
    n = system.n
    if guess.n != n:
        raise ValueError(f"guess has {guess.n} components, system has {n}")
    if phase_condition not in ("max-at-zero", "integral-phase"):
        raise ValueError(f"unknown phase condition {phase_condition!r}")
    free = tuple(free)
    n_constraints = 1 + (amplitude is not None)
    if len(free) != n_constraints:
        raise ValueError(f"need {n_constraints} free parameters for this constraint set, got {free}")
    for name in free:
        if name not in ("X", "s"):
            _q_index(name, n)
    U0 = np.real(np.asarray(guess.values, dtype=float))
    if not np.all(np.isfinite(U0)):
        raise ValueError("guess has non-finite entries")
    if np.max(np.abs(U0 - U0.mean(axis=1, keepdims=True))) <= CONSTANT_TOL:
        raise ProfileError("converged to constant state: the guess is constant")
    if phase_condition == "max-at-zero" and align_guess:
        U0 = _max_to_origin(U0, phase_component)
    N = U0.shape[1]
    D = _diff_matrix(N)
    params = {"X": guess.period, "s": float(s)}
    qv = np.asarray(q, dtype=float).copy()
    ref = U0.copy()
    dref = (D @ ref.T).T

    def unpack(z):
        U = z[: n * N].reshape(n, N)
        X, sp, qq = params["X"], params["s"], qv.copy()
        for j, name in enumerate(free):
            val = z[n * N + j]
            if name == "X":
                X = val
            elif name == "s":
                sp = val
            else:
                qq[_q_index(name, n)] = val
        return U, X, sp, qq

    def residual_and_jac(z):
        U, X, sp, qq = unpack(z)
        F = system.flux(U) - sp * U - qq[:, None]
        R = (D @ U.T).T - X * F
        J = np.asarray(system.jacobian(U))
        nN = n * N
        Jm = np.zeros((nN + n_constraints, nN + len(free)))
        for i in range(n):
            Jm[i * N:(i + 1) * N, i * N:(i + 1) * N] += D
            for j in range(n):
                Jm[i * N:(i + 1) * N, j * N:(j + 1) * N] -= X * np.diag(J[i, j] - (sp if i == j else 0.0))
        for jcol, name in enumerate(free):
            col = nN + jcol
            if name == "X":
                Jm[:nN, col] = -F.ravel()
            elif name == "s":
                Jm[:nN, col] = X * U.ravel()
            else:
                i = _q_index(name, n)
                Jm[i * N:(i + 1) * N, col] = X
        c = phase_component
        if phase_condition == "max-at-zero":
            ph = D[0] @ U[c]
            Jm[nN, c * N:(c + 1) * N] = D[0]
        else:
            ph = float(np.sum((U - ref) * dref)) / N
            Jm[nN, :nN] = dref.ravel() / N
        rows = [R.ravel(), [ph]]
        if amplitude is not None:
            rows.append([U[c, 0] - amplitude])
            Jm[nN + 1, c * N] = 1.0
        return np.concatenate(rows), Jm

    z = np.concatenate([U0.ravel(), [params[name] if name in params else qv[_q_index(name, n)] for name in free]])
    r, Jm = residual_and_jac(z)
    rnorm = np.max(np.abs(r))
    scale = max(1.0, float(np.max(np.abs(U0))))
    converged = False
    for _ in range(max_iter):
        try:
            dz = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Newton matrix (condition estimate {np.linalg.cond(Jm):.2e})") from exc
        if not np.all(np.isfinite(dz)):
            raise ConvergenceError(f"singular Newton matrix (condition estimate {np.linalg.cond(Jm):.2e})")
        lam = 1.0
        while True:
            z_new = z + lam * dz
            r_new, J_new = residual_and_jac(z_new)
            rn_new = np.max(np.abs(r_new))
            if rn_new < rnorm or lam < 1e-3 or rn_new < tol * scale:
                break
            lam *= 0.5
        z, r, Jm, rnorm = z_new, r_new, J_new, rn_new
        if rnorm < tol * scale or (lam == 1.0 and np.max(np.abs(dz)) < 1e-14 * scale):
            converged = True
            break
    U, X, sp, qq = unpack(z)
    if not converged:
        raise ConvergenceError(f"profile Newton did not converge in {max_iter} iterations (residual {rnorm:.2e})")
    cond = np.linalg.cond(Jm)
    if cond > 1e13:
        raise ConvergenceError(f"singular Newton matrix at solution (condition estimate {cond:.2e})")
    if not X > 0:
        raise ProfileError(f"converged to non-positive period {X}")
    if np.max(np.abs(U - U.mean(axis=1, keepdims=True))) <= CONSTANT_TOL:
        raise ProfileError("converged to constant state")
    return make_solution(system, X, sp, qq, U, free=free, amplitude=amplitude, phase_component=phase_component)


def refine_profile(sol: ProfileSolution, num_points: int, **kw) -> ProfileSolution:
    """Re-solve on a grid with ``num_points`` nodes starting from the interpolated profile."""
    guess = sol.profile.resample(num_points)
    return solve_profile_bvp(sol.system, SpectralField(guess.grid, np.real(guess.values)), sol.speed,
                             sol.flux_constant, free=sol.free, amplitude=sol.amplitude,
                             phase_component=sol.phase_component, align_guess=False, **kw)


def orbit_guess(system: FluxSystem, u0, s: float, q, num_points: int = 128, t_max: float = 400.0,
                direction: int = 1, component: int = 0, period_tol: float = 1e-6) -> SpectralField:
    """Integrate the profile ODE from u0 until it settles on a closed orbit.

    ``direction=-1`` integrates backward in x, which finds cycles that repel in
    forward time. Returns one period sampled with the maximum of ``component`` at x = 0.
    """
    q = np.asarray(q, dtype=float)
    sign = 1.0 if direction > 0 else -1.0

    def rhs(_, y):
        return sign * (system.flux(y) - s * y - q)

    def max_event(_, y):
        return (system.flux(y) - s * y - q)[component]

    max_event.direction = -1.0 * sign
    sol = solve_ivp(rhs, (0.0, t_max), np.asarray(u0, dtype=float), rtol=1e-11, atol=1e-12,
                    dense_output=True, events=max_event, method="DOP853")
    times = sol.t_events[0]
    times = times[times > 1e-8]
    if times.size < 3:
        raise ProfileError("no closed orbit detected from the initial point")
    T1, T2 = times[-1] - times[-2], times[-2] - times[-3]
    if abs(T1 - T2) > period_tol * T1:
        raise ProfileError(f"orbit has not settled (successive periods {T2:.8f}, {T1:.8f})")
    grid = PeriodicGrid(num_points, float(T1))
    if sign > 0:
        vals = sol.sol(times[-2] + grid.nodes)
    else:
        vals = sol.sol(times[-1] - grid.nodes)
    return SpectralField(grid, vals)


def duffing_period(amplitude: float) -> float:
    """Period of u'' = u^3 - u through the turning point u = amplitude (|amplitude| < 1)."""
    from scipy.integrate import quad

    a2 = amplitude ** 2
    val, _ = quad(lambda th: 1.0 / np.sqrt(1.0 - 0.5 * a2 * (1.0 + np.sin(th) ** 2)), 0.0, np.pi / 2,
                  epsabs=1e-15, epsrel=1e-13, limit=200)
    return 4.0 * val


def duffing_profile(system: FluxSystem, amplitude: float, q=(0.0, 0.0), num_points: int = 128,
                    tol: float = 1e-12) -> ProfileSolution:
    """Periodic wave of the viscous p-system at s = 0 whose first component peaks at ``amplitude``."""
    if system.name != "viscous_psystem":
        raise ValueError("duffing_profile needs the viscous p-system")
    q = np.asarray(q, dtype=float)
    u0 = np.array([amplitude, -q[0]])
    g = orbit_guess(system, u0, 0.0, q, num_points, t_max=200.0, period_tol=1e-5)
    return solve_profile_bvp(system, g, 0.0, q, free=("X", "s"), amplitude=amplitude, tol=tol)


# --- continuation ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileFamily:
    base: ProfileSolution
    members: tuple[ProfileSolution, ...]
    parameters: tuple[dict, ...]
    directions: tuple[str, ...]
    speed_variation: SpectralField | None = None
    notes: tuple[str, ...] = field(default=())

    def parametrization(self) -> list[dict]:
        """(X, s, q) for every member, keyed by member index."""
        return [{"X": m.period, "s": m.speed, "q": m.flux_constant.tolist()} for m in self.members]


def _with_param(sol: ProfileSolution, name: str, value: float):
    s, q, amp = sol.speed, sol.flux_constant.copy(), sol.amplitude
    if name == "s":
        s = value
    elif name == "amplitude":
        amp = value
    elif name == "X":
        raise ValueError("X cannot be a continuation direction; it is determined by the orbit")
    else:
        q[_q_index(name, sol.n)] = value
    return s, q, amp


def step_member(sol: ProfileSolution, name: str, delta: float, free=None, pin_period=False,
                tol: float = 1e-12) -> ProfileSolution:
    """Re-solve after moving one parameter by ``delta``; the previous member is the guess."""
    if name in (free or sol.free):
        raise ValueError(f"cannot step the free parameter {name!r}")
    s, q, amp = _with_param(sol, name, sol.param(name) + delta)
    grid = PeriodicGrid(sol.num_points, sol.period)
    guess = SpectralField(grid, np.real(sol.profile.values))
    return solve_profile_bvp(sol.system, guess, s, q, free=free or sol.free, amplitude=amp,
                             phase_component=sol.phase_component, align_guess=False, tol=tol)


def speed_variation(base: ProfileSolution, h_s: float = 1e-4, tol: float = 1e-12) -> SpectralField:
    """-d u-bar / d s at fixed period by centered differences.

    The period is pinned so that the variation lives on the base grid; one flux
    constant is released to keep the boundary-value problem regular. The amplitude
    constraint, if any, is dropped.
    """
    errors = []
    for i in range(base.n):
        name = f"q{i + 1}"
        try:
            pair = []
            for sign in (+1, -1):
                grid = PeriodicGrid(base.num_points, base.period)
                guess = SpectralField(grid, np.real(base.profile.values))
                sol = solve_profile_bvp(base.system, guess, base.speed + sign * h_s, base.flux_constant,
                                        free=(name,), phase_component=base.phase_component,
                                        align_guess=False, tol=tol)
                pair.append(sol)
            vals = -(pair[0].profile.values - pair[1].profile.values) / (2 * h_s)
            return SpectralField(base.profile.grid, vals)
        except (ConvergenceError, ProfileError) as exc:
            errors.append(f"{name}: {exc}")
    raise ContinuationError("speed variation unavailable: " + "; ".join(errors))


def continue_family(base: ProfileSolution, directions: Sequence[str] = ("q1",), steps: int = 1,
                    step_size: float = 1e-3, min_step: float = 1e-7, h_s: float | None = 1e-4,
                    tol: float = 1e-12, max_jump: float = 0.5) -> ProfileFamily:
    """Natural-parameter continuation from ``base`` along each direction, both signs.

    Each direction gets ``steps`` members on either side. A failed step is halved
    until ``min_step``; a period blow-up or a Newton failure at the floor is
    reported as a possible fold. With ``steps == 0`` the family is just the base.
    """
    if base.residual > 1e-9:
        raise ContinuationError(f"base residual {base.residual:.2e} exceeds 1e-9")
    members = [base]
    params = [{"index": 0, "direction": None, "offset": 0.0}]
    notes = []
    if steps > 0:
        for name in directions:
            for sign in (+1, -1):
                cur, offset = base, 0.0
                for k in range(steps):
                    h = step_size
                    while True:
                        try:
                            nxt = step_member(cur, name, sign * h, tol=tol)
                            jump = np.max(np.abs(nxt.profile.values - cur.profile.values))
                            if jump > max_jump or abs(nxt.period - cur.period) > max_jump * cur.period:
                                raise ContinuationError(f"jump {jump:.2e} too large")
                            break
                        except (ConvergenceError, ProfileError, ContinuationError) as exc:
                            h *= 0.5
                            if h < min_step:
                                raise ContinuationError(
                                    f"step floor reached along {name} ({'+' if sign > 0 else '-'}) "
                                    f"at offset {offset:.3e}; possible fold: {exc}") from exc
                    if h < step_size:
                        notes.append(f"step along {name} halved to {h:.2e}")
                    offset += sign * h
                    members.append(nxt)
                    params.append({"index": len(members) - 1, "direction": name, "offset": offset})
                    cur = nxt
    fstar = None
    if steps > 0 and h_s:
        try:
            fstar = speed_variation(base, h_s, tol=tol)
        except ContinuationError as exc:
            notes.append(str(exc))
    return ProfileFamily(base, tuple(members), tuple(params), tuple(directions), fstar, tuple(notes))


# --- (H2) rank check -----------------------------------------------------------------------

@dataclass(frozen=True)
class H2Report:
    rank: int
    singular_values: np.ndarray
    jacobian: np.ndarray
    fd_jacobian: np.ndarray
    fd_agreement: float
    columns: tuple[str, ...]


def _flow(system, y0, s, q, X, with_variations=False):
    n = system.n
    q = np.asarray(q, dtype=float)

    def rhs(_, z):
        y = z[:n]
        F = system.flux(y) - s * y - q
        if not with_variations:
            return F
        A = np.asarray(system.jacobian(y)) - s * np.eye(n)
        W = z[n:].reshape(n, 2 * n + 1)
        dW = A @ W
        dW[:, n] -= y            # d/ds
        dW[:, n + 1:] -= np.eye(n)  # d/dq_i
        return np.concatenate([F, dW.ravel()])

    z0 = np.asarray(y0, dtype=float)
    if with_variations:
        W0 = np.zeros((n, 2 * n + 1))
        W0[:, :n] = np.eye(n)
        z0 = np.concatenate([z0, W0.ravel()])
    sol = solve_ivp(rhs, (0.0, X), z0, rtol=1e-12, atol=1e-13, method="DOP853")
    if not sol.success:
        raise ConvergenceError(f"variational integration failed: {sol.message}")
    return sol.y[:, -1]


def check_H2_rank(base: ProfileSolution, tol: float = 1e-8, fd_step: float = 1e-6) -> H2Report:
    """Jacobian of H(X; a, s, q) = u(X; a, s, q) - a at the base wave.

    Columns are ordered [X, a_1..a_n, s, q_1..q_n]; the variational equations give
    the analytic Jacobian and a centered finite-difference Jacobian serves as a check.
    """
    if base.residual > 1e-9:
        raise ProfileError(f"base residual {base.residual:.2e} exceeds 1e-9")
    if base.derivative.sup_norm() < 1e-12:
        raise ProfileError("constant state: the rank check needs a nonconstant periodic wave")
    n = base.n
    a = base.base_point
    s, q, X = base.speed, base.flux_constant, base.period
    z = _flow(base.system, a, s, q, X, with_variations=True)
    yX = z[:n]
    W = z[n:].reshape(n, 2 * n + 1)
    Fend = base.system.flux(yX) - s * yX - q
    J = np.zeros((n, 2 * n + 2))
    J[:, 0] = Fend
    J[:, 1:n + 1] = W[:, :n] - np.eye(n)
    J[:, n + 1] = W[:, n]
    J[:, n + 2:] = W[:, n + 1:]

    def H(p):
        XX, aa, ss, qq = p[0], p[1:n + 1], p[n + 1], p[n + 2:]
        return _flow(base.system, aa, ss, qq, XX) - aa

    p0 = np.concatenate([[X], a, [s], q])
    Jfd = np.zeros_like(J)
    for k in range(p0.size):
        e = np.zeros_like(p0)
        e[k] = fd_step
        Jfd[:, k] = (H(p0 + e) - H(p0 - e)) / (2 * fd_step)
    rank, sv = numeric_rank(J, tol)
    cols = ("X",) + tuple(f"a{i + 1}" for i in range(n)) + ("s",) + tuple(f"q{i + 1}" for i in range(n))
    agree = float(np.max(np.abs(J - Jfd)) / max(1.0, np.max(np.abs(J))))
    return H2Report(rank, sv, J, Jfd, agree, cols)


# --- disk cache ---------------------------------------------------------------------------

def _header_key(header: dict) -> str:
    blob = json.dumps(header, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_profile(sol: ProfileSolution, directory) -> Path:
    """Write a JSON header and a CSV table of node values; returns the JSON path."""
    directory = Path(directory)
    header = sol.header()
    key = _header_key(header)
    header["key"] = key
    rows = ["x," + ",".join(f"u{i + 1}" for i in range(sol.n))]
    for m, x in enumerate(sol.profile.grid.nodes):
        rows.append(",".join(csv_float(v) for v in [x, *np.real(sol.profile.values[:, m])]))
    _atomic_write(directory / f"profile_{key}.csv", "\n".join(rows) + "\n")
    path = directory / f"profile_{key}.json"
    _atomic_write(path, json.dumps(header, indent=2, default=float))
    return path


def load_profile(path) -> ProfileSolution:
    path = Path(path)
    header = json.loads(path.read_text())
    key = header.pop("key", None)
    if key is not None and key != _header_key(header):
        raise ProfileError(f"cache header hash mismatch in {path}")
    system = make_system(header["system"], header["parameters"])
    with open(path.with_suffix(".csv")) as fh:
        table = np.array([[float(v) for v in row] for row in list(csv.reader(fh))[1:]])
    sol = make_solution(system, header["X"], header["s"], header["q"], table[:, 1:].T,
                        free=tuple(header["free"]), amplitude=header["amplitude"],
                        phase_component=header["phase_component"])
    if sol.residual > max(10 * header["residual"], 1e-12):
        warnings.warn(f"cached profile residual grew from {header['residual']:.2e} to {sol.residual:.2e}",
                      RuntimeWarning, stacklevel=2)
    return sol


def cached_profile(directory, header_hint: dict, builder) -> ProfileSolution:
    """Return a cached profile whose request header matches, else build and save one."""
    directory = Path(directory)
    key = _header_key(header_hint)
    idx = directory / f"request_{key}.txt"
    if idx.exists():
        target = directory / idx.read_text().strip()
        if target.exists():
            return load_profile(target)
    sol = builder()
    path = save_profile(sol, directory)
    _atomic_write(idx, path.name)
    return sol

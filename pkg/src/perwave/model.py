"""Conservation-law systems u_t + f(u)_x = u_xx with analytic flux derivatives.

Flux callables are vectorised over trailing axes: a state array of shape
(n, ...) maps to a flux of shape (n, ...), a Jacobian of shape (n, n, ...)
and a Hessian of shape (n, n, n, ...) with ``hessian[i, j, k] = d^2 f_i / du_j du_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .numerics import SpectralField


@dataclass(frozen=True)
class FluxSystem:
    name: str
    n: int
    parameters: Mapping[str, float]
    flux: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    notes: str = field(default="", compare=False)

    def describe(self) -> dict:
        return {"name": self.name, "n": self.n, "parameters": dict(self.parameters)}


def builtin_viscous_psystem(c3: float = 1.0, c1: float = -1.0, offset: float = 0.0) -> FluxSystem:
    """Viscous p-system u_t - v_x = u_xx, v_t - sigma(u)_x = v_xx.

    sigma(u) = c3 u^3 + c1 u + offset. At speed zero the profile equation is the
    Duffing oscillator u'' = sigma(u) + q_2.
    """
    if c3 == 0:
        raise ValueError("c3 must be nonzero: the linear p-system has no Duffing orbits")

    def sigma(u):
        return c3 * u ** 3 + c1 * u + offset

    def flux(w):
        w = np.asarray(w)
        return np.stack([-w[1], -sigma(w[0])])

    def jacobian(w):
        w = np.asarray(w)
        u = w[0]
        J = np.zeros((2, 2) + u.shape)
        J[0, 1] = -1.0
        J[1, 0] = -(3 * c3 * u ** 2 + c1)
        return J

    def hessian(w):
        w = np.asarray(w)
        u = w[0]
        H = np.zeros((2, 2, 2) + u.shape)
        H[1, 0, 0] = -6 * c3 * u
        return H

    return FluxSystem("viscous_psystem", 2, {"c3": c3, "c1": c1, "offset": offset},
                      flux, jacobian, hessian)


def rotating_cubic_system(kappa: float = 1.0, beta: float = 0.5, gamma: float = 0.0) -> FluxSystem:
    """f(u, v) = (-v + kappa u r^2 + beta u^2,  u + kappa v r^2 + gamma v^2), r^2 = u^2 + v^2.

    For s with s/kappa > 0 the profile equation carries a hyperbolic limit cycle
    whose period moves with s, so the zero eigenvalue at xi = 0 is generically
    nonsemisimple (a Jordan chain generated by speed variations).
    """
    if kappa == 0:
        raise ValueError("kappa must be nonzero")

    def flux(w):
        w = np.asarray(w)
        u, v = w[0], w[1]
        r2 = u * u + v * v
        return np.stack([-v + kappa * u * r2 + beta * u * u, u + kappa * v * r2 + gamma * v * v])

    def jacobian(w):
        w = np.asarray(w)
        u, v = w[0], w[1]
        r2 = u * u + v * v
        J = np.empty((2, 2) + np.shape(u))
        J[0, 0] = kappa * (r2 + 2 * u * u) + 2 * beta * u
        J[0, 1] = -1.0 + 2 * kappa * u * v
        J[1, 0] = 1.0 + 2 * kappa * u * v
        J[1, 1] = kappa * (r2 + 2 * v * v) + 2 * gamma * v
        return J

    def hessian(w):
        w = np.asarray(w)
        u, v = w[0], w[1]
        H = np.empty((2, 2, 2) + np.shape(u))
        H[0, 0, 0] = 6 * kappa * u + 2 * beta
        H[0, 0, 1] = H[0, 1, 0] = 2 * kappa * v
        H[0, 1, 1] = 2 * kappa * u
        H[1, 0, 0] = 2 * kappa * v
        H[1, 0, 1] = H[1, 1, 0] = 2 * kappa * u
        H[1, 1, 1] = 6 * kappa * v + 2 * gamma
        return H

    return FluxSystem("rotating_cubic", 2, {"kappa": kappa, "beta": beta, "gamma": gamma},
                      flux, jacobian, hessian)


def linear_system(matrix) -> FluxSystem:
    """Constant-coefficient flux f(u) = A u; A = [[0]] gives the heat equation."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("linear flux matrix must be square")

    def flux(w):
        return np.tensordot(A, np.asarray(w, dtype=float), axes=(1, 0))

    def jacobian(w):
        w = np.asarray(w, dtype=float)
        return np.broadcast_to(A.reshape((n, n) + (1,) * (w.ndim - 1)), (n, n) + w.shape[1:]).copy()

    def hessian(w):
        w = np.asarray(w, dtype=float)
        return np.zeros((n, n, n) + w.shape[1:])

    params = {f"a{i}{j}": float(A[i, j]) for i in range(n) for j in range(n)}
    return FluxSystem("linear", n, params, flux, jacobian, hessian)


SYSTEMS = {
    "viscous_psystem": lambda p: builtin_viscous_psystem(
        float(p.get("c3", 1.0)), float(p.get("c1", -1.0)), float(p.get("offset", 0.0))),
    "rotating_cubic": lambda p: rotating_cubic_system(
        float(p.get("kappa", 1.0)), float(p.get("beta", 0.5)), float(p.get("gamma", 0.0))),
    "linear": lambda p: linear_system(p["matrix"]),
}


def make_system(name: str, parameters: Mapping | None = None) -> FluxSystem:
    if name not in SYSTEMS:
        raise KeyError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}")
    return SYSTEMS[name](dict(parameters or {}))


def linearized_coefficient(system: FluxSystem, profile: SpectralField) -> np.ndarray:
    """Jacobian df(u(x)) sampled along the profile, shape (n, n, num_points)."""
    if profile.n != system.n:
        raise ValueError(f"profile has {profile.n} components, system has {system.n}")
    return np.asarray(system.jacobian(np.real(profile.values)), dtype=float)

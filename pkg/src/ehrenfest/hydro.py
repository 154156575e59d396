"""Deterministic solvers for the hydrodynamic density equation

    d/dt rho(t, x) = int lambda(y, x) rho(t, y) dy - rho(t, x) int lambda(x, y) dy,

the backward semigroup ``exp(t (P1 - P2))`` acting on test functions, and
the exact single-ball transition structure of the ``N``-box system.

On a :class:`GridSpec` with kernel matrix ``L[j, k] = lambda(x_j, x_k)`` the
semi-discrete density generator is ``D = w L^T - diag(w L 1)`` and the
test-function generator ``P1 - P2`` is its transpose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernel import DiscreteKernel, GridSpec, RateKernel, node_values
from .linalg import expm

__all__ = [
    "DensityField",
    "density_generator",
    "backward_generator",
    "rk4_steps",
    "time_grid",
    "jump_generator",
    "solve_density",
    "density_expm",
    "semigroup_apply",
    "transition_matrix",
    "mean_counts",
]


@dataclass(frozen=True)
class DensityField:
    """Density ``values[k, j] = rho(times[k], x_j)`` on ``grid``."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        """Snapshot at a stored time (nearest step within 1e-9)."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9:
            raise DomainError(f"time {t} is not a stored snapshot")
        return self.values[k]

    def mass(self) -> np.ndarray:
        return self.values.sum(axis=1) / self.grid.m


def density_generator(k: RateKernel, g: GridSpec) -> np.ndarray:
    """Matrix of the semi-discrete density equation (gain minus loss)."""
    lam = k.matrix(g.nodes, g.nodes)
    w = g.weight
    return w * lam.T - np.diag(w * lam.sum(axis=1))


def backward_generator(k: RateKernel, g: GridSpec) -> np.ndarray:
    """Matrix of ``P1 - P2`` on node values."""
    lam = k.matrix(g.nodes, g.nodes)
    w = g.weight
    return w * lam - np.diag(w * lam.sum(axis=1))


def _initial(phi, g: GridSpec) -> np.ndarray:
    rho0 = g.sample(phi)
    if np.any(rho0 < 0):
        raise DomainError("initial density must be nonnegative")
    return rho0


def time_grid(horizon: float, dt: float) -> np.ndarray:
    """Step times ``0, dt, 2dt, ...`` ending exactly at ``horizon``.

    The last step is truncated when ``dt`` does not divide ``horizon``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    if horizon < 0:
        raise DomainError("horizon must be nonnegative")
    steps = max(int(math.ceil(horizon / dt - 1e-9)), 0)
    times = np.arange(steps + 1, dtype=float) * dt
    times[-1] = horizon
    return times


def rk4_steps(rhs, y0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Classical RK4 for ``y' = rhs(t, y)``; returns ``y`` at every time."""
    out = np.empty((times.size, y0.size))
    out[0] = y0
    y = y0
    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return out


def solve_density(phi, k: RateKernel, g: GridSpec, dt: float = 1e-3, horizon: float = 1.0) -> DensityField:
    """Integrate the density equation with fixed-step RK4.

    ``phi`` is a callable or an array of node values.  Snapshots are kept at
    every step.
    """
    rho0 = _initial(phi, g)
    times = time_grid(horizon, dt)
    gen = density_generator(k, g)
    values = rk4_steps(lambda t, y: gen @ y, rho0, times)
    return DensityField(grid=g, times=times, values=values)


def density_expm(phi, k: RateKernel, g: GridSpec, t: float) -> np.ndarray:
    """``rho_t = exp(t (P3 - P2)) phi`` via the dense matrix exponential."""
    rho0 = _initial(phi, g)
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return rho0.copy()
    return expm(t * density_generator(k, g)) @ rho0


def semigroup_apply(H, k: RateKernel, g: GridSpec, t: float) -> np.ndarray:
    """``exp(t (P1 - P2)) H`` on the grid."""
    h = g.sample(H)
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return h.copy()
    return expm(t * backward_generator(k, g)) @ h


def jump_generator(dk: DiscreteKernel) -> np.ndarray:
    """Generator of one ball's position; self-jumps are null events."""
    q = dk.rates / dk.n
    q = q - np.diag(np.diag(q))
    q[np.diag_indices(dk.n)] = -q.sum(axis=1)
    return q


def transition_matrix(dk: DiscreteKernel, t: float) -> np.ndarray:
    """``p[i, j]``: probability a ball starting in box ``i`` is in box ``j`` at ``t``."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return np.eye(dk.n)
    return expm(t * jump_generator(dk))


def mean_counts(phi, dk: DiscreteKernel, t: float) -> np.ndarray:
    """Exact ``E X_t(i) = sum_k phi(k/n) p_ki(t)`` under Poisson initial data."""
    m0 = node_values(phi, dk.n)
    if t == 0:
        return m0.copy()
    return m0 @ transition_matrix(dk, t)

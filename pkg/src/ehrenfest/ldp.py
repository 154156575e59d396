"""Large-deviation rate functionals, control fields, tilted dynamics and the
exponential martingale.

For a path density ``psi(s, x)`` the dynamic rate is the value of the
concave functional

    vartheta(G) = int int d_s psi G ds dx
                  - int int int psi(s, x) lambda(x, y) (exp(G(y) - G(x)) - 1) ds dx dy

at its maximizer.  Under a product kernel ``lambda1(x) lambda2(y)`` the
maximizer solves the balance equation

    d_s psi(s, x) = int psi(s, y) lambda(y, x) e^{G(x) - G(y)} - psi(s, x) lambda(x, y) e^{G(y) - G(x)} dy

and is given slice by slice in closed form once the scalar ``C_s`` is known.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegeneratePathError,
    DomainError,
    NumericalDegeneracyError,
    ShapeError,
)
from .hydro import rk4_steps, time_grid
from .kernel import DiscreteKernel, GridSpec, RateKernel, discretize, node_values, nodes, quadrature
from .simulator import Trajectory, require_events, run_replicas, sample_initial, simulate

__all__ = [
    "POSITIVITY_FLOOR",
    "PathDensity",
    "ControlField",
    "rate_initial",
    "nonlinear_B",
    "varpi",
    "find_Cs",
    "control_field",
    "balance_residual",
    "rate_dynamic",
    "rate_dynamic_lower_bound",
    "trial_family",
    "tilted_density",
    "hydrodynamic_path",
    "martingale_lambda",
    "martingale_ensemble",
]

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-12
D0_TOL = 1e-6


def _uniform_step(times: np.ndarray) -> float:
    if times.size < 2:
        return 0.0
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise DomainError("times must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        # a truncated final step is allowed
        if np.max(np.abs(steps[:-1] - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
            raise DomainError("path times must have a uniform step")
    return float(steps[0])


@dataclass(frozen=True)
class PathDensity:
    """Density path ``values[k, j] = psi(times[k], x_j)`` with its time derivative."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    dvalues: np.ndarray

    def __post_init__(self):
        shape = (self.times.size, self.grid.m)
        if self.values.shape != shape or self.dvalues.shape != shape:
            raise ShapeError(f"path arrays must have shape {shape}")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.dvalues))):
            raise DomainError("path values must be finite")
        _uniform_step(self.times)

    @classmethod
    def from_values(cls, grid: GridSpec, times, values, dvalues=None) -> "PathDensity":
        """Build a path; missing derivatives come from second-order finite differences."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if dvalues is None:
            if times.size < 3:
                raise ShapeError("need at least 3 time nodes to differentiate a path")
            dvalues = np.gradient(values, times, axis=0, edge_order=2)
        return cls(grid=grid, times=times, values=values, dvalues=np.asarray(dvalues, dtype=float))

    def d0_residual(self) -> np.ndarray:
        """``int d_s psi(s, x) dx`` for every time slice (zero on D_0)."""
        return quadrature(self.dvalues, self.grid)

    def in_d0(self, tol: float = D0_TOL) -> bool:
        return bool(np.all(np.abs(self.d0_residual()) <= tol) and np.all(self.values >= 0))

    def mass(self) -> np.ndarray:
        return quadrature(self.values, self.grid)


@dataclass(frozen=True)
class ControlField:
    """Field ``values[k, j] = G(times[k], x_j)``.

    Between stored times the field is linearly interpolated; outside it is
    held constant.  ``constants`` carries the ``C_s`` values when the field
    was built by :func:`control_field`.
    """

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    constants: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.values.shape != (self.times.size, self.grid.m):
            raise ShapeError("control field values must be (times x grid)")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("control field times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("control field must be finite")

    @classmethod
    def constant_in_time(cls, grid: GridSpec, G, times) -> "ControlField":
        g = grid.sample(G)
        times = np.asarray(times, dtype=float).reshape(-1)
        return cls(grid=grid, times=times, values=np.tile(g, (times.size, 1)))

    def at(self, s: float) -> np.ndarray:
        t = self.times
        if t.size == 1 or s <= t[0]:
            return self.values[0]
        if s >= t[-1]:
            return self.values[-1]
        k = int(np.searchsorted(t, s, side="right")) - 1
        a = (s - t[k]) / (t[k + 1] - t[k])
        if a == 0.0:
            return self.values[k]
        return self.values[k] + a * (self.values[k + 1] - self.values[k])

    def time_derivative(self) -> np.ndarray:
        if self.times.size == 1:
            return np.zeros_like(self.values)
        order = 2 if self.times.size >= 3 else 1
        return np.gradient(self.values, self.times, axis=0, edge_order=order)


def rate_initial(psi0, phi, g: GridSpec) -> float:
    """Relative-entropy rate of an initial profile, ``0 log 0 = 0``."""
    p = g.sample(psi0)
    f = g.sample(phi)
    if np.any(~(f > 0)):
        raise DomainError("reference profile phi must be strictly positive")
    if np.any(p < 0):
        raise DomainError("initial profile must be nonnegative")
    pos = p > 0
    plogp = np.zeros_like(p)
    plogp[pos] = p[pos] * (np.log(p[pos]) - np.log(f[pos]))
    # each node's integrand is a nonnegative convex gap; clip rounding
    integrand = np.maximum(plogp + f - p, 0.0)
    return float(quadrature(integrand, g))


def _b_operator(G: np.ndarray, lam: np.ndarray, w: float) -> np.ndarray:
    """``w * sum_y lam[x, y] (exp(G[y] - G[x]) - 1)`` for one field slice."""
    return w * np.sum(lam * np.expm1(G[None, :] - G[:, None]), axis=1)


def nonlinear_B(f, k: RateKernel, g: GridSpec, mode: str = "continuum", n: Optional[int] = None) -> np.ndarray:
    """``B f(x) = int lambda(x, y) (exp(f(y) - f(x)) - 1) dy`` at the nodes of ``g``.

    ``mode="continuum"`` integrates with the grid quadrature;
    ``mode="discrete"`` uses the ``1/n`` box sum over ``y = j/n``.  In
    discrete mode with ``n != g.m``, ``f`` must be a callable.
    """
    x = g.nodes
    if mode == "continuum":
        return _b_operator(g.sample(f), k.matrix(x, x), g.weight)
    if mode != "discrete":
        raise DomainError(f"unknown mode {mode!r}")
    n = g.m if n is None else int(n)
    y = nodes(n)
    if callable(f):
        fx = np.asarray(f(x), dtype=float) * np.ones(x.size)
        fy = np.asarray(f(y), dtype=float) * np.ones(n)
    elif n == g.m:
        fx = fy = g.sample(f)
    else:
        raise ShapeError("discrete mode on a different box count needs a callable f")
    lam = k.matrix(x, y)
    return np.sum(lam * np.expm1(fy[None, :] - fx[:, None]), axis=1) / n


def varpi(c: float, dpsi: np.ndarray, a: np.ndarray, w: float) -> float:
    """``2c - int sqrt(dpsi^2 + 4 a c)`` with ``a = psi lambda1 lambda2``."""
    return 2.0 * c - w * float(np.sum(np.sqrt(dpsi * dpsi + 4.0 * a * c)))


def find_Cs(psi_s, dpsi_s, lambda1, lambda2, g: GridSpec, rtol: float = 1e-12) -> float:
    """Unique positive root of the convex function :func:`varpi`, by bisection."""
    psi, dpsi = g.sample(psi_s), g.sample(dpsi_s)
    l1, l2 = g.sample(lambda1), g.sample(lambda2)
    if np.any(~(l1 > 0)) or np.any(~(l2 > 0)):
        raise DomainError("kernel marginals must be strictly positive")
    if np.any(psi < 0):
        raise DomainError("path density must be nonnegative")
    if not (np.max(psi) >= POSITIVITY_FLOOR and quadrature(psi, g) > 0):
        raise DegeneratePathError("path density vanishes on this slice")
    a = psi * l1 * l2
    w = g.weight

    lo, hi = 1e-16, 1.0
    while varpi(lo, dpsi, a, w) > 0:
        lo *= 1e-4
        if lo < 1e-300:
            raise NumericalDegeneracyError("could not bracket C_s from below")
    while varpi(hi, dpsi, a, w) <= 0:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise NumericalDegeneracyError("could not bracket C_s from above")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if varpi(mid, dpsi, a, w) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _require_product(k: RateKernel, g: GridSpec):
    if not k.is_product:
        raise DomainError("control field construction needs a product-form kernel")
    l1, l2 = k.marginals(g.nodes)
    if np.any(~(l1 > 0)) or np.any(~(l2 > 0)):
        raise DomainError("kernel marginals must be strictly positive")
    return l1, l2


def control_field(psi: PathDensity, k: RateKernel) -> ControlField:
    """Control field solving the balance equation for ``psi``, slice by slice."""
    g = psi.grid
    l1, l2 = _require_product(k, g)
    if np.any(psi.values < POSITIVITY_FLOOR):
        raise DomainError(f"path density must be >= {POSITIVITY_FLOOR} at every node")
    d0 = np.abs(psi.d0_residual())
    if np.any(d0 > D0_TOL):
        log.warning("path leaves D_0: max |int d_s psi dx| = %.3g", d0.max())

    out = np.empty_like(psi.values)
    consts = np.empty(psi.times.size)
    for i in range(psi.times.size):
        p, d = psi.values[i], psi.dvalues[i]
        c = find_Cs(p, d, l1, l2, g)
        a4 = 4.0 * p * l1 * l2 * c
        root = np.sqrt(d * d + a4)
        # d + root without cancellation when d < 0
        num = np.where(d >= 0, d + root, a4 / (root - d))
        arg = num / (2.0 * c * l2)
        if np.any(~(arg > 0)) or not np.all(np.isfinite(arg)):
            raise NumericalDegeneracyError("log argument of the control field is not positive")
        out[i] = np.log(arg)
        consts[i] = c
    return ControlField(grid=g, times=psi.times.copy(), values=out, constants=consts)


def _tilted_rhs(gam: np.ndarray, G: np.ndarray, lam: np.ndarray, w: float) -> np.ndarray:
    eg = np.exp(G - G.max())
    emg = np.exp(-(G - G.max()))
    gain = w * eg * (lam.T @ (gam * emg))
    loss = w * gam * emg * (lam @ eg)
    return gain - loss


def balance_residual(psi: PathDensity, G: ControlField, k: RateKernel) -> float:
    """Sup-norm residual of the balance equation over all time slices."""
    g = psi.grid
    gv = _aligned(psi, G)
    lam = k.matrix(g.nodes, g.nodes)
    res = 0.0
    for i in range(psi.times.size):
        r = psi.dvalues[i] - _tilted_rhs(psi.values[i], gv[i], lam, g.weight)
        res = max(res, float(np.max(np.abs(r))))
    return res


def _aligned(psi: PathDensity, G: ControlField) -> np.ndarray:
    if G.grid.m != psi.grid.m:
        raise ShapeError("control field and path live on different grids")
    if G.times.shape != psi.times.shape or not np.allclose(G.times, psi.times, rtol=0, atol=1e-12):
        raise ShapeError("control field and path must share time nodes")
    return G.values


def rate_dynamic(psi: PathDensity, G: ControlField, k: RateKernel) -> float:
    """``vartheta(G)``: trapezoid in time, grid quadrature in space."""
    gv = _aligned(psi, G)
    g = psi.grid
    lam = k.matrix(g.nodes, g.nodes)
    w = g.weight
    slices = np.empty(psi.times.size)
    for i in range(psi.times.size):
        drift = w * float(np.dot(psi.dvalues[i], gv[i]))
        jump = w * float(np.dot(psi.values[i], _b_operator(gv[i], lam, w)))
        slices[i] = drift - jump
    if psi.times.size == 1:
        return 0.0
    return float(np.trapezoid(slices, psi.times))


def rate_dynamic_lower_bound(psi: PathDensity, k: RateKernel, trial_fields: Sequence[ControlField]) -> float:
    """Largest ``vartheta`` over a finite family of trial fields."""
    fields = list(trial_fields)
    if not fields:
        raise ValueError("trial family is empty")
    return max(rate_dynamic(psi, G, k) for G in fields)


_TRIALS = {
    "constant": lambda x: np.zeros_like(x),
    "linear-x": lambda x: x,
    "sin-x": lambda x: np.sin(2 * math.pi * x),
}


def trial_family(names: Sequence[str], grid: GridSpec, times, scale: float = 1.0) -> list[ControlField]:
    """Time-constant trial fields by name: ``constant`` (zero), ``linear-x``, ``sin-x``."""
    out = []
    for name in names:
        if name not in _TRIALS:
            raise DomainError(f"unknown trial field {name!r}; use one of {sorted(_TRIALS)}")
        out.append(ControlField.constant_in_time(grid, scale * _TRIALS[name](grid.nodes), times))
    return out


def tilted_density(gamma, G: ControlField, k: RateKernel, dt: float = 1e-3, horizon: Optional[float] = None) -> PathDensity:
    """Density of the dynamics tilted by ``G``, integrated with RK4.

    ``horizon`` defaults to the last time stored in ``G``.  ``dvalues``
    holds the exact right-hand side at every time node.
    """
    g = G.grid
    gam0 = g.sample(gamma)
    if np.any(~(gam0 > 0)):
        raise DomainError("initial profile must be strictly positive")
    T = float(G.times[-1]) if horizon is None else float(horizon)
    times = time_grid(T, dt)
    lam = k.matrix(g.nodes, g.nodes)
    w = g.weight

    def rhs(s, y):
        return _tilted_rhs(y, G.at(s), lam, w)

    values = rk4_steps(rhs, gam0, times)
    dvalues = np.stack([rhs(s, y) for s, y in zip(times, values)])
    return PathDensity(grid=g, times=times, values=values, dvalues=dvalues)


def hydrodynamic_path(phi, k: RateKernel, g: GridSpec, dt: float = 1e-3, horizon: float = 1.0) -> PathDensity:
    """Untilted path (``G = 0``) with exact time derivatives."""
    zero = ControlField.constant_in_time(g, np.zeros(g.m), [0.0])
    return tilted_density(phi, zero, k, dt=dt, horizon=horizon)


class _CumulativeField:
    """Node values of ``G`` and of ``int_0^t (d_s + B^N) G_s ds`` at any ``t``."""

    def __init__(self, G: ControlField, dk: DiscreteKernel):
        self.s = G.times
        self.G = G.values
        drift = G.time_derivative()
        bn = np.stack([_b_operator(row, dk.rates, 1.0 / dk.n) for row in G.values])
        self.F = drift + bn
        if self.s.size > 1:
            h = np.diff(self.s)[:, None]
            steps = 0.5 * h * (self.F[:-1] + self.F[1:])
            self.cum = np.vstack([np.zeros((1, dk.n)), np.cumsum(steps, axis=0)])
        else:
            self.cum = np.zeros((1, dk.n))

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.s, t, side="right") - 1, 0, self.s.size - 1)
        return t, k

    def integral(self, t, box=None):
        """Cumulative integral at time(s) ``t``; full vector or selected boxes."""
        t, k = self._locate(t)
        cols = slice(None) if box is None else box
        tau = t - self.s[k]
        nxt = np.minimum(k + 1, self.s.size - 1)
        # past the last node F is held constant: nxt == k gives zero slope
        h = np.where(nxt == k, 1.0, self.s[nxt] - self.s[k])
        slope = (self.F[nxt, cols] - self.F[k, cols]) / h
        return self.cum[k, cols] + tau * self.F[k, cols] + 0.5 * tau * tau * slope

    def value(self, t: float) -> np.ndarray:
        t, k = self._locate(t)
        if k >= self.s.size - 1:
            return self.G[-1]
        a = (t - self.s[k]) / (self.s[k + 1] - self.s[k])
        if a == 0.0:
            return self.G[k]
        # additive form keeps constant fields exact
        return self.G[k] + a * (self.G[k + 1] - self.G[k])


def martingale_lambda(traj: Trajectory, G: ControlField, dk: DiscreteKernel, times=None):
    """Evaluate the exponential martingale along an event-resolved trajectory.

    Returns ``(times, values)``.  Between jumps the occupation is constant,
    so the compensator is integrated ball by ball against the cumulative
    integral of the piecewise-linear ``(d_s + B^N) G_s``.
    """
    ev = require_events(traj)
    if G.grid.m != dk.n:
        raise ShapeError(f"control field has {G.grid.m} nodes, system has {dk.n} boxes")
    times = traj.times if times is None else np.asarray(times, dtype=float).reshape(-1)
    cf = _CumulativeField(G, dk)
    x0 = traj.initial
    g0 = cf.value(0.0)
    cf_dst = cf.integral(ev.times, ev.dst) if ev.times.size else np.empty(0)
    cf_src = cf.integral(ev.times, ev.src) if ev.times.size else np.empty(0)
    values = np.empty(times.size)
    for i, t in enumerate(times):
        upto = int(np.searchsorted(ev.times, t, side="right"))
        g_t, c_t = cf.value(t), cf.integral(t)
        phi_t = g_t - c_t
        log_lam = float(np.dot(x0, g_t - g0 - c_t))
        if upto:
            d, s = ev.dst[:upto], ev.src[:upto]
            log_lam += float(np.sum(phi_t[d] - phi_t[s] + cf_dst[:upto] - cf_src[:upto]))
        values[i] = math.exp(log_lam)
    return times, values


def martingale_ensemble(
    G: ControlField,
    k: RateKernel,
    phi,
    horizon: float,
    replicas: int,
    seed: int,
    times=None,
    threads: int = 1,
) -> np.ndarray:
    """``Lambda_t`` for every replica; shape ``(replicas, len(times))``."""
    n = G.grid.m
    dk = discretize(k, n)
    ts = np.asarray([horizon] if times is None else times, dtype=float)
    means = node_values(phi, n)

    def one(_, rng):
        x0 = sample_initial(means, n, rng)
        traj = simulate(x0, dk, ts, rng, record_events=True, horizon=horizon)
        return martingale_lambda(traj, G, dk)[1]

    return np.stack(run_replicas(one, seed, replicas, threads))

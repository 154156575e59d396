"""Gaussian fluctuations of the empirical measure around its hydrodynamic limit.

The limiting variance of ``V_t(H)`` is

    theta^2(t, H) = int (S_t H)^2 phi dx + int_0^t || b_s(S_{t-s} H) ||^2 ds,

with ``S_u = exp(u (P1 - P2))`` and
``||b_s f||^2 = int int rho(s, x) lambda(x, y) (f(x) - f(y))^2 dx dy``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, ShapeError
from .hydro import backward_generator, density_generator, mean_counts
from .kernel import GridSpec, RateKernel, discretize, node_values, quadrature
from .linalg import expm
from .simulator import SimConfig, sample_initial, run_replicas, simulate

__all__ = [
    "VarianceReport",
    "b_norm_sq",
    "theta",
    "theta_sq",
    "fluctuation_samples",
    "sample_fluctuation",
    "clt_check",
]


def _b_norm_sq(f: np.ndarray, rho: np.ndarray, lam: np.ndarray, w: float) -> float:
    diff = f[:, None] - f[None, :]
    return float(w * w * np.sum(rho[:, None] * lam * diff * diff))


def b_norm_sq(f, rho_s, k: RateKernel, g: GridSpec) -> float:
    """Double quadrature of ``rho_s(x) lambda(x, y) (f(x) - f(y))^2``."""
    fv, rho = g.sample(f), g.sample(rho_s)
    return _b_norm_sq(fv, rho, k.matrix(g.nodes, g.nodes), g.weight)


def theta_sq(t: float, H, phi, k: RateKernel, g: GridSpec, s_steps: int = 100) -> float:
    """Squared limiting standard deviation of ``V_t(H)``.

    The time integral uses the composite trapezoid rule on ``s_steps + 1``
    nodes.  Both ``S_{t-s} H`` (swept backward from ``s = t``) and the
    density ``rho(s)`` (swept forward from ``phi``) are advanced between
    nodes with the exact one-step propagator of the grid system.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if s_steps < 1:
        raise ValueError("s_steps must be >= 1")
    h, ph = g.sample(H), g.sample(phi)
    if t == 0:
        return float(quadrature(h * h * ph, g))

    ds = t / s_steps
    back = expm(ds * backward_generator(k, g))
    fwd = expm(ds * density_generator(k, g))
    flows = np.empty((s_steps + 1, g.m))
    flows[s_steps] = h
    for i in range(s_steps - 1, -1, -1):
        flows[i] = back @ flows[i + 1]

    lam = k.matrix(g.nodes, g.nodes)
    integrand = np.empty(s_steps + 1)
    rho = ph
    for i in range(s_steps + 1):
        integrand[i] = _b_norm_sq(flows[i], rho, lam, g.weight)
        rho = fwd @ rho
    initial_term = quadrature(flows[0] ** 2 * ph, g)
    return float(initial_term + np.trapezoid(integrand, dx=ds))


def theta(t: float, H, phi, k: RateKernel, g: GridSpec, s_steps: int = 100) -> float:
    return math.sqrt(max(theta_sq(t, H, phi, k, g, s_steps), 0.0))


def fluctuation_samples(
    times: Sequence[float],
    tests: Sequence,
    cfg: SimConfig,
    k: RateKernel,
    phi,
    threads: int = 1,
) -> np.ndarray:
    """``V_t^N(H)`` for every replica, time and test function.

    Returns an array of shape ``(replicas, len(times), len(tests))``.  Each
    replica is one simulation sampled at all ``times``, centred by the exact
    mean counts.
    """
    times = np.asarray(times, dtype=float)
    n = cfg.n
    dk = discretize(k, n)
    hs = np.stack([node_values(H, n) for H in tests], axis=1)
    phi_v = node_values(phi, n)
    means = np.stack([mean_counts(phi_v, dk, t) for t in times])
    scale = 1.0 / math.sqrt(n)

    def one(_, rng):
        x0 = sample_initial(phi_v, n, rng)
        traj = simulate(x0, dk, times, rng)
        return ((traj.counts - means) @ hs) * scale

    return np.stack(run_replicas(one, cfg.seed, cfg.replicas, threads))


def sample_fluctuation(t: float, H, cfg: SimConfig, k: RateKernel, phi, threads: int = 1) -> np.ndarray:
    """Samples of ``V_t^N(H)``, one per replica."""
    return fluctuation_samples([t], [H], cfg, k, phi, threads)[:, 0, 0]


@dataclass(frozen=True)
class VarianceReport:
    t: Optional[float]
    H: Optional[str]
    theta_sq_formula: float
    theta_sq_empirical: float
    replicas: int
    standard_error: float
    z_score: float
    skewness: float = float("nan")
    excess_kurtosis: float = float("nan")

    def passed(self, z_max: float = 3.3) -> bool:
        return abs(self.z_score) <= z_max

    def normality_ok(self, sigmas: float = 3.0) -> bool:
        """Skewness and excess kurtosis inside their large-sample bands.

        The bands ignore the genuine ``O(n^{-1/2})`` skewness of a finite
        system, so they only discriminate when ``replicas`` is small next to ``n``.
        """
        r = self.replicas
        return (abs(self.skewness) <= sigmas * math.sqrt(6.0 / r)
                and abs(self.excess_kurtosis) <= sigmas * math.sqrt(24.0 / r))


def clt_check(samples, theta_sq: float, t: Optional[float] = None, H: Optional[str] = None) -> VarianceReport:
    """Compare the sample variance against ``theta_sq``.

    The standard error of the unbiased variance uses the fourth central
    moment: ``Var(s^2) = (m4 - s^4 (R - 3) / (R - 1)) / R``.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    r = x.size
    if r < 2:
        raise InsufficientDataError("need at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ShapeError("samples must be finite")
    c = x - x.mean()
    var = float(np.sum(c * c) / (r - 1))
    m2 = float(np.mean(c * c))
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    se = math.sqrt(max((m4 - var * var * (r - 3) / (r - 1)) / r, 0.0))
    diff = var - theta_sq
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    skew = m3 / m2**1.5 if m2 > 0 else float("nan")
    kurt = m4 / (m2 * m2) - 3.0 if m2 > 0 else float("nan")
    return VarianceReport(
        t=t,
        H=H,
        theta_sq_formula=float(theta_sq),
        theta_sq_empirical=var,
        replicas=r,
        standard_error=se,
        z_score=z,
        skewness=skew,
        excess_kurtosis=kurt,
    )

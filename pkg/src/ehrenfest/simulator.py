"""Exact simulation of the N-box particle system.

Balls move independently: a ball in box ``i`` waits an exponential time of
rate ``row_intensity[i] / n`` and then lands in box ``j`` with probability
``rates[i, j] / row_intensity[i]``.  Landing back in ``i`` is a real event
that leaves the state unchanged.  Because the generator factorizes over
balls, every ball can be advanced with its own clock and the box counts are
recovered with ``bincount``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DataError, DomainError, ShapeError
from .kernel import DiscreteKernel, node_values

__all__ = [
    "SimConfig",
    "EventLog",
    "Trajectory",
    "replica_rng",
    "sample_initial",
    "simulate",
    "empirical_integral",
    "run_replicas",
    "simulate_ensemble",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    n: int
    horizon: float
    sample_times: tuple
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sample_times", tuple(float(t) for t in self.sample_times))
        problems = []
        if self.n < 1:
            problems.append("n must be >= 1")
        if self.replicas < 1:
            problems.append("replicas must be >= 1")
        ts = np.asarray(self.sample_times)
        if ts.size and (ts[0] < 0 or ts[-1] > self.horizon):
            problems.append("sample_times must lie in [0, horizon]")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            problems.append("sample_times must be strictly increasing")
        if problems:
            raise DomainError("; ".join(problems))


@dataclass(frozen=True)
class EventLog:
    """Every jump, in time order.  ``src == dst`` marks a self-jump."""

    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Box counts at the requested sample times.

    ``initial`` is the state at time 0.  ``events`` is only present for
    event-resolved runs.
    """

    times: np.ndarray
    counts: np.ndarray
    initial: np.ndarray
    events: Optional[EventLog] = None

    @property
    def snapshots(self):
        return list(zip(self.times.tolist(), self.counts))

    def total_mass(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def replica_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for replica ``index`` of an ensemble with master ``seed``.

    The stream is keyed by numpy's ``SeedSequence(seed, spawn_key=(index,))``,
    which hashes the pair into an independent PCG64 state.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_initial(phi, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson counts with means ``phi(i/n)``."""
    means = node_values(phi, n)
    if np.any(~(means >= 0)):
        raise DomainError("Poisson means must be nonnegative")
    return rng.poisson(means).astype(np.int64)


def _destinations(dk: DiscreteKernel, src: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = src + rng.random(src.size)
    j = np.searchsorted(dk.jump_cdf, u, side="right") - src * dk.n
    return np.minimum(j, dk.n - 1)


def simulate(
    x0,
    dk: DiscreteKernel,
    sample_times: Sequence[float],
    rng: np.random.Generator,
    record_events: bool = False,
    horizon: Optional[float] = None,
) -> Trajectory:
    """Exact realization of the process from counts ``x0``.

    With ``record_events`` every jump up to ``horizon`` (default: last sample
    time) is kept in ``Trajectory.events``.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (dk.n,):
        raise ShapeError(f"initial state has shape {x0.shape}, kernel has {dk.n} boxes")
    if np.any(x0 < 0):
        raise DomainError("box counts must be nonnegative")
    ts = np.asarray(sample_times, dtype=float).reshape(-1)
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        raise DomainError("sample_times must be strictly increasing")
    if ts.size and ts[0] < 0:
        raise DomainError("sample_times must be nonnegative")
    end = ts[-1] if ts.size else 0.0
    if horizon is not None:
        end = max(end, float(horizon))

    n = dk.n
    rate = dk.exit_rate
    pos = np.repeat(np.arange(n), x0)
    clock = rng.standard_exponential(pos.size) / rate[pos]
    counts = np.empty((ts.size, n), dtype=np.int64)
    ev_t, ev_src, ev_dst = [], [], []

    targets = list(ts)
    if record_events and (not targets or targets[-1] < end):
        targets.append(end)
    for k, target in enumerate(targets):
        while True:
            due = np.flatnonzero(clock <= target)
            if due.size == 0:
                break
            src = pos[due]
            dst = _destinations(dk, src, rng)
            if record_events:
                ev_t.append(clock[due].copy())
                ev_src.append(src)
                ev_dst.append(dst)
            pos[due] = dst
            clock[due] += rng.standard_exponential(due.size) / rate[dst]
        if k < ts.size:
            counts[k] = np.bincount(pos, minlength=n)

    events = None
    if record_events:
        if ev_t:
            t_all = np.concatenate(ev_t)
            order = np.argsort(t_all, kind="stable")
            events = EventLog(t_all[order], np.concatenate(ev_src)[order], np.concatenate(ev_dst)[order])
        else:
            empty = np.empty(0, dtype=np.int64)
            events = EventLog(np.empty(0), empty, empty)
    return Trajectory(times=ts, counts=counts, initial=x0.copy(), events=events)


def empirical_integral(x, f, n: Optional[int] = None) -> np.ndarray:
    """``(1/n) sum_i counts(i) f(i/n)``; ``x`` may hold several states (rows)."""
    x = np.asarray(x)
    n = x.shape[-1] if n is None else n
    fv = node_values(f, n)
    if x.shape[-1] != n:
        raise ShapeError("counts and test function must both have n entries")
    return x @ fv / n


def run_replicas(func: Callable, seed: int, replicas: int, threads: int = 1) -> list:
    """Call ``func(index, rng)`` for each replica; results in index order."""
    if replicas < 1:
        raise DomainError("replicas must be >= 1")

    def one(i):
        return func(i, replica_rng(seed, i))

    if threads <= 1:
        return [one(i) for i in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(replicas)))


def simulate_ensemble(
    cfg: SimConfig,
    phi,
    dk: DiscreteKernel,
    record_events: bool = False,
    threads: int = 1,
) -> list[Trajectory]:
    """Poisson(phi) start plus one exact run per replica."""
    if dk.n != cfg.n:
        raise ShapeError(f"config has n={cfg.n}, kernel has {dk.n} boxes")
    means = node_values(phi, cfg.n)

    def one(_, rng):
        x0 = sample_initial(means, cfg.n, rng)
        return simulate(x0, dk, cfg.sample_times, rng, record_events=record_events, horizon=cfg.horizon)

    log.debug("simulating %d replicas, n=%d", cfg.replicas, cfg.n)
    return run_replicas(one, cfg.seed, cfg.replicas, threads)


def require_events(traj: Trajectory) -> EventLog:
    if traj.events is None:
        raise DataError("trajectory was not recorded with events")
    return traj.events

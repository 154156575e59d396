import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehrenfest.errors import DataError, ShapeError
from ehrenfest.kernel import GridSpec, RateKernel, discretize
from ehrenfest.ldp import ControlField, martingale_ensemble, martingale_lambda
from ehrenfest.simulator import replica_rng, sample_initial, simulate

PRODUCT = RateKernel.product(lambda x: 1 + x, lambda y: 2 - y)


def brute_log_lambda(traj, G_of, dG_of, dk, t, sub=2000):
    """Replay the events and integrate the compensator on a fine midpoint grid."""
    n = dk.n
    lam = dk.rates

    def F(s):
        g = G_of(s)
        bn = np.sum(lam * np.expm1(g[None, :] - g[:, None]), axis=1) / n
        return dG_of(s) + bn

    ev = traj.events
    state = traj.initial.astype(float).copy()
    comp, last = 0.0, 0.0
    cuts = [tt for tt in ev.times if tt <= t] + [t]
    k = 0
    for cut in cuts:
        if cut > last:
            h = (cut - last) / max(1, int(sub * (cut - last)))
            mids = np.arange(last + h / 2, cut, h)
            comp += h * sum(float(state @ F(s)) for s in mids)
        if k < ev.times.size and ev.times[k] == cut and cut <= t:
            state[ev.src[k]] -= 1
            state[ev.dst[k]] += 1
            k += 1
        last = cut
    return float(state @ G_of(t) - traj.initial @ G_of(0.0) - comp)


def run(dk, seed, x0=None, horizon=1.0):
    rng = replica_rng(seed, 0)
    if x0 is None:
        x0 = sample_initial(lambda x: 1 + x / 2, dk.n, rng)
    return simulate(x0, dk, [horizon], rng, record_events=True, horizon=horizon)


@given(st.floats(min_value=-3, max_value=3), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_constant_field_is_exactly_one(c, seed):
    dk = discretize(PRODUCT, 6)
    traj = run(dk, seed)
    G = ControlField.constant_in_time(GridSpec(6), np.full(6, c), [0.0, 1.0])
    _, vals = martingale_lambda(traj, G, dk, times=[0.0, 0.3, 1.0])
    assert vals.tolist() == [1.0, 1.0, 1.0]


def test_starts_at_one():
    dk = discretize(PRODUCT, 5)
    G = ControlField.constant_in_time(GridSpec(5), np.linspace(-1, 1, 5), [0.0])
    _, vals = martingale_lambda(run(dk, 3), G, dk, times=[0.0])
    assert vals[0] == 1.0


def test_time_constant_field_matches_brute_force():
    dk = discretize(PRODUCT, 5)
    g = GridSpec(5)
    gv = 0.8 * np.sin(2 * math.pi * g.nodes)
    G = ControlField.constant_in_time(g, gv, [0.0])
    for seed in range(5):
        traj = run(dk, seed)
        times, vals = martingale_lambda(traj, G, dk, times=[0.25, 0.5, 1.0])
        for t, v in zip(times, vals):
            ref = brute_log_lambda(traj, lambda s: gv, lambda s: 0 * gv, dk, t, sub=50)
            assert math.log(v) == pytest.approx(ref, rel=1e-10, abs=1e-10)
            assert v > 0


def test_time_dependent_field_matches_brute_force():
    dk = discretize(PRODUCT, 4)
    g = GridSpec(4)
    shape = g.nodes - 0.5
    times = np.linspace(0, 1, 201)
    G = ControlField(g, times, np.outer(np.sin(3 * times), shape))
    for seed in range(3):
        traj = run(dk, seed)
        _, vals = martingale_lambda(traj, G, dk, times=[1.0])
        ref = brute_log_lambda(traj, lambda s: math.sin(3 * s) * shape,
                               lambda s: 3 * math.cos(3 * s) * shape, dk, 1.0)
        assert math.log(vals[0]) == pytest.approx(ref, abs=1e-4)


def test_requires_events():
    dk = discretize(PRODUCT, 3)
    traj = simulate([1, 1, 1], dk, [1.0], replica_rng(0, 0))
    G = ControlField.constant_in_time(GridSpec(3), np.zeros(3), [0.0])
    with pytest.raises(DataError):
        martingale_lambda(traj, G, dk)


def test_grid_mismatch():
    dk = discretize(PRODUCT, 3)
    G = ControlField.constant_in_time(GridSpec(4), np.zeros(4), [0.0])
    with pytest.raises(ShapeError):
        martingale_lambda(run(dk, 0, x0=[1, 0, 0]), G, dk)


def test_ensemble_mean_is_one():
    g = GridSpec(4)
    times = np.linspace(0, 1, 11)
    G = ControlField(g, times, 0.5 * np.outer(1 - times, np.cos(2 * math.pi * g.nodes)))
    lam = martingale_ensemble(G, PRODUCT, lambda x: 1 + x / 2, 1.0, 4000, seed=17, times=[0.5, 1.0])
    assert lam.shape == (4000, 2)
    assert lam.min() > 0
    for col in lam.T:
        se = col.std(ddof=1) / math.sqrt(col.size)
        assert abs(col.mean() - 1) <= 3.3 * se

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import table_kernel
from ehrenfest.errors import InsufficientDataError, ShapeError
from ehrenfest.fluctuation import (
    b_norm_sq,
    clt_check,
    fluctuation_samples,
    sample_fluctuation,
    theta,
    theta_sq,
)
from ehrenfest.hydro import density_expm, semigroup_apply
from ehrenfest.kernel import GridSpec, RateKernel, quadrature
from ehrenfest.simulator import SimConfig

PRODUCT = RateKernel.product(lambda x: 1 + x, lambda y: 2 - y)
PHI = lambda x: 1 + x / 2  # noqa: E731
H = lambda x: np.sin(2 * np.pi * x) + x  # noqa: E731


def variance_oracle(t, h, phi, k, g):
    # independent balls plus Poisson start: Var V_t(H) = <rho_t, H^2>
    return quadrature(density_expm(phi, k, g, t) * g.sample(h) ** 2, g)


def test_b_norm_constant_and_zero(grid200):
    x = grid200.nodes
    assert b_norm_sq(np.full(200, 3.3), 1 + x, PRODUCT, grid200) == 0.0
    assert b_norm_sq(x, np.zeros(200), PRODUCT, grid200) == 0.0


def test_b_norm_uniform(grid200):
    val = b_norm_sq(lambda x: x, lambda x: 1 + 0 * x, RateKernel.constant(1.0), grid200)
    assert abs(val - 1 / 6) <= 1e-3
    # discrete value: twice the population variance of the nodes
    assert val == pytest.approx((1 - 1 / 200**2) / 6, rel=1e-12)


def test_b_norm_shape_error(grid200):
    with pytest.raises(ShapeError):
        b_norm_sq(np.ones(10), np.ones(200), PRODUCT, grid200)


def test_theta_at_zero(grid200):
    h, ph = H(grid200.nodes), PHI(grid200.nodes)
    assert theta_sq(0.0, H, PHI, PRODUCT, grid200) == quadrature(h * h * ph, grid200)
    assert theta(0.0, H, PHI, PRODUCT, grid200) == math.sqrt(quadrature(h * h * ph, grid200))


@pytest.mark.parametrize("t", [0.3, 1.0, 2.0])
def test_total_mass_fluctuation_is_frozen(t):
    g = GridSpec(60)
    got = theta_sq(t, lambda x: 1 + 0 * x, PHI, table_kernel(60), g)
    assert got == pytest.approx(quadrature(PHI(g.nodes), g), abs=1e-12)


@pytest.mark.parametrize("k", [RateKernel.constant(1.0), PRODUCT, table_kernel(80)], ids=["const", "prod", "table"])
def test_theta_matches_exact_variance(k):
    g = GridSpec(80)
    got = theta_sq(0.8, H, PHI, k, g, s_steps=200)
    ref = variance_oracle(0.8, H, PHI, k, g)
    assert got == pytest.approx(ref, rel=5e-5)


def test_trapezoid_refinement_ratio():
    g = GridSpec(60)
    ref = variance_oracle(1.0, H, PHI, PRODUCT, g)
    e1 = theta_sq(1.0, H, PHI, PRODUCT, g, s_steps=20) - ref
    e2 = theta_sq(1.0, H, PHI, PRODUCT, g, s_steps=40) - ref
    assert 3.5 <= e1 / e2 <= 4.5


@given(st.floats(min_value=-5, max_value=5))
@settings(max_examples=15, deadline=None)
def test_homogeneity(a):
    g = GridSpec(40)
    base = theta_sq(0.7, H, PHI, PRODUCT, g, s_steps=20)
    scaled = theta_sq(0.7, lambda x: a * H(x), PHI, PRODUCT, g, s_steps=20)
    assert scaled == pytest.approx(a * a * base, rel=1e-10, abs=1e-12)


@given(st.floats(min_value=-3, max_value=3))
@settings(max_examples=15, deadline=None)
def test_constant_shift(c):
    g = GridSpec(40)
    t = 0.7
    base = theta_sq(t, H, PHI, PRODUCT, g, s_steps=20)
    shifted = theta_sq(t, lambda x: H(x) + c, PHI, PRODUCT, g, s_steps=20)
    sh = semigroup_apply(H, PRODUCT, g, t)
    expected = quadrature((2 * c * sh + c * c) * PHI(g.nodes), g)
    assert shifted - base == pytest.approx(expected, abs=1e-8)


def test_theta_against_monte_carlo():
    n, t = 100, 1.0
    k = RateKernel.constant(1.0)
    cfg = SimConfig(n=n, horizon=t, sample_times=[t], seed=31, replicas=3000)
    samples = sample_fluctuation(t, lambda x: x, cfg, k, lambda x: 1 + 0 * x)
    target = theta_sq(t, lambda x: x, lambda x: 1 + 0 * x, k, GridSpec(n))
    rep = clt_check(samples, target)
    assert rep.passed()
    # Poisson cumulants give a finite-n skewness of <rho, H^3> / (sqrt(n) <rho, H^2>^1.5)
    g = GridSpec(n)
    skew = quadrature(g.nodes**3, g) / (math.sqrt(n) * quadrature(g.nodes**2, g) ** 1.5)
    assert abs(rep.skewness - skew) <= 3.3 * math.sqrt(6 / rep.replicas)
    assert abs(rep.excess_kurtosis) <= 3.3 * math.sqrt(24 / rep.replicas)


def test_sample_fluctuation_total_mass_at_zero():
    c, n = 2.0, 50
    cfg = SimConfig(n=n, horizon=1.0, sample_times=[0.0], seed=5, replicas=4000)
    s = sample_fluctuation(0.0, lambda x: 1 + 0 * x, cfg, RateKernel.constant(1.0), lambda x: c + 0 * x)
    rep = clt_check(s, c)
    assert abs(rep.z_score) <= 3.3


def test_total_mass_variance_constant_in_time():
    n = 40
    cfg = SimConfig(n=n, horizon=1.0, sample_times=[0.0, 0.5, 1.0], seed=8, replicas=3000)
    s = fluctuation_samples([0.0, 0.5, 1.0], [lambda x: 1 + 0 * x], cfg, PRODUCT, PHI)
    # the total mass never changes so the three columns coincide
    assert np.allclose(s[:, 0, 0], s[:, 1, 0]) and np.allclose(s[:, 0, 0], s[:, 2, 0])
    assert clt_check(s[:, 2, 0], quadrature(PHI(np.arange(1, n + 1) / n), GridSpec(n))).passed()


def test_sample_fluctuation_small_cases():
    cfg = SimConfig(n=10, horizon=1.0, sample_times=[1.0], seed=1, replicas=1)
    one = sample_fluctuation(1.0, lambda x: x, cfg, PRODUCT, PHI)
    assert one.shape == (1,) and np.isfinite(one[0])
    cfg = SimConfig(n=10, horizon=1.0, sample_times=[1.0], seed=1, replicas=20)
    assert not sample_fluctuation(1.0, lambda x: 0 * x, cfg, PRODUCT, PHI).any()


def test_clt_check_examples():
    rep = clt_check(np.full(10, 1.5), 2.0)
    assert rep.theta_sq_empirical == 0.0
    assert rep.z_score == -math.inf
    with pytest.raises(InsufficientDataError):
        clt_check([1.0], 1.0)
    x = np.random.default_rng(0).normal(size=50)
    rep = clt_check(x, float(np.var(x, ddof=1)))
    assert rep.z_score == 0.0
    assert rep.standard_error > 0


def test_clt_check_gaussian_calibration():
    v = 2.5
    rng = np.random.default_rng(2024)
    zs = [clt_check(rng.normal(scale=math.sqrt(v), size=2000), v).z_score for _ in range(200)]
    assert max(abs(z) for z in zs) <= 3.3 + 0.5  # 200 draws: allow the rare tail
    assert sum(abs(z) > 3.3 for z in zs) <= 2
    assert abs(np.mean(zs)) <= 3.3 / math.sqrt(200) * 1.2

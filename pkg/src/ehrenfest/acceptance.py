"""Acceptance suite: each criterion runs at its fixed tolerance and writes one
CSV of metrics.  CSVs hold only seed-determined numbers, so two runs with the
same master seed are byte-identical; wall-clock times are reported on stdout
only.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import fluctuation, hydro, ldp
from .config import write_csv
from .kernel import GridSpec, RateKernel, discretize, nodes, quadrature
from .simulator import SimConfig, empirical_integral, replica_rng, sample_initial, simulate, simulate_ensemble

Z_BAND = 3.3
DEFAULT_SEED = 20240607


@dataclass
class Metric:
    name: str
    value: float
    tolerance: float
    ok: bool


@dataclass
class CriterionResult:
    number: int
    title: str
    metrics: list = field(default_factory=list)
    seconds: float = 0.0
    time_limit: Optional[float] = None

    def check(self, name: str, value: float, tolerance: float, ok: Optional[bool] = None) -> None:
        if ok is None:
            ok = abs(value) <= tolerance
        self.metrics.append(Metric(name, float(value), float(tolerance), bool(ok)))

    @property
    def within_time(self) -> bool:
        return self.time_limit is None or self.seconds <= self.time_limit

    @property
    def passed(self) -> bool:
        return bool(self.metrics) and all(m.ok for m in self.metrics) and self.within_time

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = [m.name for m in self.metrics if not m.ok]
        limit = f"/{self.time_limit:.0f}s" if self.time_limit else ""
        extra = f"  failing: {', '.join(worst)}" if worst else ""
        if not self.within_time:
            extra += "  (over time limit)"
        return f"[{status}] {self.number}. {self.title}  ({self.seconds:.1f}s{limit}){extra}"


def criterion_seed(master: int, number: int) -> int:
    """Independent 63-bit seed for one criterion, derived from the master seed."""
    state = np.random.SeedSequence([int(master), int(number)]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def _product_kernel() -> RateKernel:
    return RateKernel.product(lambda x: 1.0 + x, lambda y: 2.0 - y)


def _table_kernel(m: int) -> RateKernel:
    x = nodes(m)
    tab = 1.0 + 0.5 * np.sin(2 * math.pi * x)[:, None] * np.cos(2 * math.pi * x)[None, :] + 0.25 * np.outer(x, x)
    return RateKernel.table(tab)


def _phi_lln(x):
    return 1.0 + x / 2.0


def _phi_tilted(x):
    return 1.0 + (x - 0.5)


def criterion_1(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(1, "hydrodynamic LLN, n=m=1000, 20 replicas", time_limit=120.0)
    n, T = 1000, 1.0
    k = _product_kernel()
    g = GridSpec(n)
    rho_T = hydro.solve_density(_phi_lln, k, g, dt=1e-3, horizon=T).values[-1]
    target = float(quadrature(g.nodes * rho_T, g))
    cfg = SimConfig(n=n, horizon=T, sample_times=(T,), seed=seed, replicas=20)
    trajs = simulate_ensemble(cfg, _phi_lln, discretize(k, n), threads=threads)
    values = np.array([empirical_integral(tr.counts[0], lambda x: x) for tr in trajs])
    res.check("ensemble_mean_minus_limit", values.mean() - target, 0.01)
    res.check("replica0_minus_limit", values[0] - target, 0.05)
    res.metrics.append(Metric("max_replica_deviation_info", float(np.max(np.abs(values - target))), math.nan, True))
    return res


def criterion_2(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(2, "RK4 vs matrix exponential, m=200", time_limit=10.0)
    g = GridSpec(200)
    kernels = {"constant": RateKernel.constant(1.0), "product": _product_kernel(), "table": _table_kernel(g.m)}
    for name, k in kernels.items():
        field_ = hydro.solve_density(_phi_lln, k, g, dt=1e-3, horizon=1.0)
        for t in (0.25, 0.5, 1.0):
            ref = hydro.density_expm(_phi_lln, k, g, t)
            res.check(f"{name}_t{t}_sup_diff", np.max(np.abs(field_.at(t) - ref)), 1e-6)
    # lambda = 1 closed form as stated, then with the grid mean of phi in place of 1;
    # the two differ by the O(1/m) bias of the right-endpoint quadrature
    field_ = hydro.solve_density(_phi_tilted, kernels["constant"], g, dt=1e-3, horizon=1.0)
    phi = _phi_tilted(g.nodes)
    mass = quadrature(phi, g)
    for t in (0.25, 0.5, 1.0):
        stated = 1.0 + (g.nodes - 0.5) * math.exp(-t)
        res.check(f"closed_form_t{t}_sup_diff", np.max(np.abs(field_.at(t) - stated)), 1e-6)
        grid_exact = mass + (phi - mass) * math.exp(-t)
        res.check(f"grid_closed_form_t{t}_sup_diff", np.max(np.abs(field_.at(t) - grid_exact)), 1e-6)
    return res


def criterion_3(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(3, "mass conservation")
    n = 200
    k = _product_kernel()
    dk = discretize(k, n)
    times = np.linspace(0.0, 1.0, 11)
    bitwise = True
    for r in range(20):
        rng = replica_rng(seed, r)
        x0 = sample_initial(_phi_lln, n, rng)
        tr = simulate(x0, dk, times, rng)
        bitwise &= bool(np.all(tr.total_mass() == x0.sum()))
    res.check("simulation_total_mass_bitwise_constant", 0.0 if bitwise else 1.0, 0.0, bitwise)
    g = GridSpec(200)
    dens = hydro.solve_density(_phi_lln, k, g, dt=1e-3, horizon=1.0)
    res.check("density_mass_drift", np.ptp(dens.mass()), 1e-8)
    G = ldp.ControlField.constant_in_time(g, 0.3 * np.sin(2 * math.pi * g.nodes), [0.0, 1.0])
    tilted = ldp.tilted_density(_phi_lln, G, k, dt=1e-3)
    res.check("tilted_mass_drift", np.ptp(tilted.mass()), 1e-8)
    return res


def criterion_4(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(4, "CLT variance, n=200, 5000 replicas", time_limit=300.0)
    n, T = 200, 1.0
    k = RateKernel.constant(1.0)
    g = GridSpec(n)
    one = lambda x: np.ones_like(x)  # noqa: E731
    lin = lambda x: x  # noqa: E731
    times = (0.0, 0.5, 1.0)
    cfg = SimConfig(n=n, horizon=T, sample_times=times, seed=seed, replicas=5000)
    samples = fluctuation.fluctuation_samples(times, [lin, one], cfg, k, one, threads=threads)

    th = fluctuation.theta_sq(T, lin, one, k, g, s_steps=100)
    rep = fluctuation.clt_check(samples[:, -1, 0], th, t=T, H="linear")
    res.check("linear_t1_z", rep.z_score, Z_BAND)
    res.metrics.append(Metric("linear_t1_theta_sq_info", th, math.nan, True))
    res.metrics.append(Metric("linear_t1_empirical_info", rep.theta_sq_empirical, math.nan, True))
    mass = float(quadrature(one(g.nodes), g))
    for i, t in enumerate(times):
        rep1 = fluctuation.clt_check(samples[:, i, 1], mass, t=t, H="one")
        res.check(f"one_t{t}_z", rep1.z_score, Z_BAND)
    return res


def criterion_5(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(5, "zero cross-covariance, n=100, 5000 replicas")
    n, t = 100, 0.5
    k = _product_kernel()
    cfg = SimConfig(n=n, horizon=t, sample_times=(t,), seed=seed, replicas=5000)
    trajs = simulate_ensemble(cfg, _phi_lln, discretize(k, n), threads=threads)
    counts = np.stack([tr.counts[0] for tr in trajs]).astype(float)
    pick = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    for _ in range(5):
        i, j = pick.choice(n, size=2, replace=False)
        a = counts[:, i] - counts[:, i].mean()
        b = counts[:, j] - counts[:, j].mean()
        prod = a * b
        cov = prod.sum() / (prod.size - 1)
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        res.check(f"pair_{i + 1}_{j + 1}_z", cov / se, Z_BAND)
    return res


def criterion_6(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(6, "rate-function zeros")
    g = GridSpec(200)
    # unit grid mass: the cosine sums to zero over the nodes
    phi = 1.0 + 0.5 * np.cos(2 * math.pi * g.nodes)
    res.check("unit_mass", quadrature(phi, g) - 1.0, 1e-14)
    res.check("I_ini_at_phi", ldp.rate_initial(phi, phi, g), 0.0)

    k1 = RateKernel.constant(1.0)
    path = ldp.hydrodynamic_path(phi, k1, g, dt=1e-3, horizon=1.0)
    G = ldp.control_field(path, k1)
    res.check("hydro_G_sup", np.max(np.abs(G.values)), 1e-8)
    res.check("hydro_I_dyn", ldp.rate_dynamic(path, G, k1), 1e-8)

    kp = _product_kernel()
    l1, l2 = kp.marginals(g.nodes)
    stationary = 1.3 * l2 / l1
    times = np.linspace(0.0, 1.0, 101)
    spath = ldp.PathDensity(grid=g, times=times, values=np.tile(stationary, (times.size, 1)),
                            dvalues=np.zeros((times.size, g.m)))
    Gs = ldp.control_field(spath, kp)
    expected = -math.log(quadrature(l2, g))
    res.check("stationary_G_minus_expected_sup", np.max(np.abs(Gs.values - expected)), 1e-8)
    res.check("stationary_I_dyn", ldp.rate_dynamic(spath, Gs, kp), 1e-8)
    return res


def criterion_7(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(7, "tilt round trip")
    g = GridSpec(200)
    k = _product_kernel()
    G = ldp.ControlField.constant_in_time(g, 0.3 * np.sin(2 * math.pi * g.nodes), [0.0, 1.0])
    psi = ldp.tilted_density(_phi_lln, G, k, dt=1e-3)
    G2 = ldp.control_field(psi, k)
    psi2 = ldp.tilted_density(_phi_lln, G2, k, dt=1e-3)
    res.check("round_trip_sup_diff", np.max(np.abs(psi2.values - psi.values)), 1e-6)
    G_on_path = ldp.ControlField.constant_in_time(g, G.values[0], psi.times)
    v_orig = ldp.rate_dynamic(psi, G_on_path, k)
    v_new = ldp.rate_dynamic(psi, G2, k)
    res.check("vartheta_difference", v_new - v_orig, 1e-8)
    family = ldp.trial_family(["constant", "linear-x"], g, psi.times) + [G_on_path]
    res.check("lower_bound_minus_vartheta", ldp.rate_dynamic_lower_bound(psi, k, family) - v_new, 1e-8)
    res.check("balance_residual_sup", ldp.balance_residual(psi, G2, k), 1e-6)
    res.metrics.append(Metric("I_dyn_info", v_new, math.nan, True))
    return res


def criterion_8(seed: int, threads: int = 1) -> CriterionResult:
    res = CriterionResult(8, "exponential martingale mean, n=5, 1e5 replicas")
    n, T = 5, 0.5
    g = GridSpec(n)
    k = RateKernel.constant(1.0)
    one = lambda x: np.ones_like(x)  # noqa: E731
    G = ldp.ControlField.constant_in_time(g, 0.2 * g.nodes, [0.0])
    lam = ldp.martingale_ensemble(G, k, one, T, replicas=100_000, seed=seed, threads=threads)[:, -1]
    se = lam.std(ddof=1) / math.sqrt(lam.size)
    res.check("mean_minus_one_z", (lam.mean() - 1.0) / se, Z_BAND)
    res.check("all_positive", 0.0 if np.all(lam > 0) else 1.0, 0.0)
    Gc = ldp.ControlField.constant_in_time(g, np.full(n, 0.7), [0.0])
    lam_c = ldp.martingale_ensemble(Gc, k, one, T, replicas=1000, seed=seed + 1, times=[0.0, 0.25, T],
                                    threads=threads)
    res.check("constant_G_max_abs_deviation", float(np.max(np.abs(lam_c - 1.0))), 0.0)
    return res


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
}


def write_result(res: CriterionResult, out_dir: Path, master_seed: int) -> Path:
    rows = [(m.name, m.value, m.tolerance, m.ok) for m in res.metrics]
    return write_csv(Path(out_dir) / f"criterion_{res.number}.csv", ["metric", "value", "tolerance", "passed"], rows,
                     seed=master_seed)


def run_suite(out_dir, seed: int = DEFAULT_SEED, threads: int = 1, only=None, echo: Callable = print) -> list:
    """Run criteria 1-8 and write one CSV per criterion into ``out_dir``."""
    out_dir = Path(out_dir)
    results = []
    for number, fn in CRITERIA.items():
        if only is not None and number not in only:
            continue
        t0 = time.perf_counter()
        res = fn(criterion_seed(seed, number), threads=threads)
        res.seconds = time.perf_counter() - t0
        write_result(res, out_dir, seed)
        if echo:
            echo(res.line())
        results.append(res)
    return results


def compare_outputs(dir_a, dir_b, pattern: str = "criterion_*.csv") -> tuple[bool, list]:
    """Byte-compare the files matching ``pattern`` in two directories."""
    names = sorted(p.name for p in Path(dir_a).glob(pattern))
    other = sorted(p.name for p in Path(dir_b).glob(pattern))
    if names != other:
        return False, sorted(set(names) ^ set(other))
    _, mismatch, errors = filecmp.cmpfiles(dir_a, dir_b, names, shallow=False)
    return not (mismatch or errors), mismatch + errors


def determinism_check(first_dir, seed: int, threads: int = 1, echo: Callable = print) -> CriterionResult:
    """Criterion 9: rerun the suite in a scratch directory and byte-compare."""
    res = CriterionResult(9, "determinism (rerun byte-identical)")
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        run_suite(tmp, seed=seed, threads=threads, echo=None)
        same, diff = compare_outputs(first_dir, tmp)
    res.seconds = time.perf_counter() - t0
    res.check("differing_files", float(len(diff)), 0.0, same)
    if echo:
        echo(res.line())
    return res

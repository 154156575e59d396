"""Command-line experiment runner.

Usage::

    ehrenfest <command> [--config FILE] [flags]

Commands: hydro, simulate, clt, ldp, martingale, acceptance.  Settings come
from the defaults, then the config file (YAML or JSON, command-specific
options may sit in a section named after the command), then flags.

Kernels: ``constant:c``, ``product:<expr>;<expr>`` or ``table:<csv>``.
Expression ids: ``constant(c)``, ``affine(a,b)`` = a + b*x,
``sinusoid(a,b)`` = a + b*sin(2*pi*x).

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 acceptance failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import acceptance, fluctuation, hydro, ldp
from .config import (
    TEST_FUNCTIONS,
    ExperimentConfig,
    build_kernel,
    load_config,
    parse_kernel_flag,
    read_csv,
    write_csv,
)
from .errors import ConfigError, DataError, EhrenfestError, NumericalError, ValidationError
from .kernel import GridSpec, builtin_function, discretize
from .simulator import SimConfig, simulate_ensemble

log = logging.getLogger("ehrenfest")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3
MARTINGALE_MAX_N = 10
MARTINGALE_MAX_G = 1.0

# flag dest -> config field
_FLAG_FIELDS = {
    "seed": "seed", "threads": "threads", "n": "n", "grid_m": "m", "dt": "dt", "horizon": "horizon",
    "replicas": "replicas", "method": "method", "s_steps": "s_steps", "test_function": "test_function",
    "path_csv": "path_csv", "dpsi_csv": "dpsi_csv", "phi": "phi", "tilt": "tilt", "control": "control",
    "martingale_n": "n", "martingale_replicas": "replicas",
}


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehrenfest", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=["hydro", "simulate", "clt", "ldp", "martingale", "acceptance"])
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--threads", type=int)
    p.add_argument("--kernel", help="constant:c | product:<expr>;<expr> | table:<csv>")
    p.add_argument("--phi", help="initial profile expression id")
    p.add_argument("--n", type=int, help="number of boxes")
    p.add_argument("--grid-m", type=int, help="number of solver grid nodes")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--sample-times", type=_floats, help="comma-separated times")
    p.add_argument("--replicas", type=int)
    p.add_argument("--method", choices=["rk4", "expm"])
    p.add_argument("--s-steps", type=int)
    p.add_argument("--test-function", choices=sorted(TEST_FUNCTIONS))
    p.add_argument("--path-csv")
    p.add_argument("--dpsi-csv")
    p.add_argument("--trial-family", help="comma-separated: constant,linear-x,sin-x")
    p.add_argument("--tilt", help="tilt expression used when no --path-csv is given")
    p.add_argument("--control", help="martingale control expression G(x)")
    p.add_argument("--martingale-n", type=int)
    p.add_argument("--martingale-replicas", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    data = dict(data)
    data["command"] = args.command
    if args.command == "acceptance":
        data.setdefault("seed", acceptance.DEFAULT_SEED)
    for dest, key in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            data[key] = v
    if args.sample_times is not None:
        data["sample_times"] = args.sample_times
    if args.kernel is not None:
        data["kernel"] = parse_kernel_flag(args.kernel)
    if args.trial_family is not None:
        data["trial_family"] = [t.strip() for t in args.trial_family.split(",") if t.strip()]
    for key in ("dt", "horizon"):
        if isinstance(data.get(key), str):
            try:
                data[key] = float(data[key])
            except ValueError:
                pass
    return ExperimentConfig.from_dict(data)


def run_hydro(cfg: ExperimentConfig, out: Path) -> list:
    g = GridSpec(cfg.m)
    k = build_kernel(cfg.kernel)
    phi = builtin_function(cfg.phi)
    rows = []
    if cfg.method == "rk4":
        dens = hydro.solve_density(phi, k, g, dt=cfg.dt, horizon=cfg.horizon)
        times = dens.times if cfg.sample_times is None else cfg.resolved_sample_times()
        snaps = [(t, dens.at(t)) for t in times]
    else:
        snaps = [(t, hydro.density_expm(phi, k, g, t)) for t in cfg.resolved_sample_times()]
    for t, rho in snaps:
        rows.extend((float(t), float(x), float(r)) for x, r in zip(g.nodes, rho))
    return [write_csv(out / "hydro.csv", ["time", "x", "rho"], rows, cfg)]


def run_simulate(cfg: ExperimentConfig, out: Path) -> list:
    k = build_kernel(cfg.kernel)
    sim = SimConfig(n=cfg.n, horizon=cfg.horizon, sample_times=cfg.resolved_sample_times(), seed=cfg.seed,
                    replicas=cfg.replicas)
    trajs = simulate_ensemble(sim, builtin_function(cfg.phi), discretize(k, cfg.n), threads=cfg.threads)
    paths = []
    for r, tr in enumerate(trajs):
        rows = [(t, i + 1, int(c)) for t, counts in tr.snapshots for i, c in enumerate(counts)]
        paths.append(write_csv(out / f"simulate_replica{r:04d}.csv", ["time", "box_index", "count"], rows, cfg))
    return paths


def run_clt(cfg: ExperimentConfig, out: Path) -> list:
    k = build_kernel(cfg.kernel)
    phi = builtin_function(cfg.phi)
    H = builtin_function(TEST_FUNCTIONS[cfg.test_function])
    times = cfg.resolved_sample_times()
    sim = SimConfig(n=cfg.n, horizon=cfg.horizon, sample_times=times, seed=cfg.seed, replicas=cfg.replicas)
    samples = fluctuation.fluctuation_samples(times, [H], sim, k, phi, threads=cfg.threads)
    g = GridSpec(max(cfg.n, 2))
    rows = []
    for i, t in enumerate(times):
        th = fluctuation.theta_sq(t, H, phi, k, g, s_steps=cfg.s_steps)
        if cfg.replicas >= 2:
            rep = fluctuation.clt_check(samples[:, i, 0], th, t=t, H=cfg.test_function)
            emp, se, z = rep.theta_sq_empirical, rep.standard_error, rep.z_score
        else:
            emp, se, z = math.nan, math.nan, math.nan
        rows.append((t, cfg.test_function, th, emp, se, z, cfg.replicas))
    header = ["time", "test_function", "theta_sq_formula", "theta_sq_empirical", "standard_error", "z_score",
              "replicas"]
    return [write_csv(out / "clt.csv", header, rows, cfg)]


def load_path_csv(path, dpsi_path=None) -> ldp.PathDensity:
    """Read a long-format ``time,x,psi`` CSV into a path on the grid ``x = j/m``."""
    header, rows = read_csv(path)
    if header[:3] != ["time", "x", "psi"]:
        raise DataError(f"{path}: expected columns time,x,psi")
    arr = np.array(rows, dtype=float)
    times, x = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    g = GridSpec(x.size)
    if not np.allclose(x, g.nodes, atol=1e-9):
        raise DataError(f"{path}: x values must be the nodes j/m, j=1..m")
    if arr.shape[0] != times.size * x.size:
        raise DataError(f"{path}: every (time, x) pair must appear exactly once")
    ti = np.searchsorted(times, arr[:, 0])
    xi = np.searchsorted(x, arr[:, 1])
    values = np.full((times.size, x.size), np.nan)
    values[ti, xi] = arr[:, 2]
    dvalues = None
    if dpsi_path is not None:
        dh, drows = read_csv(dpsi_path)
        darr = np.array(drows, dtype=float)
        dvalues = np.full_like(values, np.nan)
        dvalues[np.searchsorted(times, darr[:, 0]), np.searchsorted(x, darr[:, 1])] = darr[:, 2]
    if np.isnan(values).any() or (dvalues is not None and np.isnan(dvalues).any()):
        raise DataError("path CSV does not cover the full time x grid")
    return ldp.PathDensity.from_values(g, times, values, dvalues)


def run_ldp(cfg: ExperimentConfig, out: Path) -> list:
    k = build_kernel(cfg.kernel)
    phi = builtin_function(cfg.phi)
    if cfg.path_csv:
        psi = load_path_csv(cfg.path_csv, cfg.dpsi_csv)
    else:
        g = GridSpec(cfg.m)
        tilt = ldp.ControlField.constant_in_time(g, builtin_function(cfg.tilt), [0.0, cfg.horizon])
        psi = ldp.tilted_density(phi, tilt, k, dt=cfg.dt)
    g = psi.grid
    trials = ldp.trial_family(cfg.trial_family, g, psi.times)
    d0 = np.abs(psi.d0_residual())
    rows = [
        ("I_ini", ldp.rate_initial(psi.values[0], phi, g)),
        ("d0_residual_max", float(d0.max())),
        ("I_dyn_lower_bound", ldp.rate_dynamic_lower_bound(psi, k, trials)),
    ]
    paths = []
    if k.is_product:
        G = ldp.control_field(psi, k)
        rows += [
            ("I_dyn", ldp.rate_dynamic(psi, G, k)),
            ("residual_sup", ldp.balance_residual(psi, G, k)),
            ("C_s_start", float(G.constants[0])),
            ("C_s_end", float(G.constants[-1])),
            ("C_s_min", float(G.constants.min())),
            ("C_s_max", float(G.constants.max())),
        ]
        grows = [(t, x, v) for t, row in zip(G.times, G.values) for x, v in zip(g.nodes, row)]
        paths.append(write_csv(out / "ldp_control.csv", ["time", "x", "G"], grows, cfg))
    else:
        log.warning("kernel is not of product form; reporting only the trial-family lower bound")
    prows = [(t, x, v) for t, row in zip(psi.times, psi.values) for x, v in zip(g.nodes, row)]
    drows = [(t, x, v) for t, row in zip(psi.times, psi.dvalues) for x, v in zip(g.nodes, row)]
    paths.append(write_csv(out / "ldp_path.csv", ["time", "x", "psi"], prows, cfg))
    paths.append(write_csv(out / "ldp_dpsi.csv", ["time", "x", "dpsi"], drows, cfg))
    paths.insert(0, write_csv(out / "ldp_rates.csv", ["quantity", "value"], rows, cfg))
    return paths


def run_martingale(cfg: ExperimentConfig, out: Path) -> list:
    k = build_kernel(cfg.kernel)
    if cfg.n < 2:
        raise ConfigError(["martingale needs n >= 2"])
    g = GridSpec(cfg.n)
    G = ldp.ControlField.constant_in_time(g, builtin_function(cfg.control), [0.0])
    if cfg.n > MARTINGALE_MAX_N or np.max(np.abs(G.values)) > MARTINGALE_MAX_G:
        log.warning("martingale run outside the n <= %d, |G| <= %.1f envelope: the Monte Carlo mean is "
                    "heavy-tailed and may converge slowly", MARTINGALE_MAX_N, MARTINGALE_MAX_G)
    times = cfg.resolved_sample_times()
    lam = ldp.martingale_ensemble(G, k, builtin_function(cfg.phi), cfg.horizon, cfg.replicas, cfg.seed,
                                  times=times, threads=cfg.threads)
    rows = []
    for i, t in enumerate(times):
        col = lam[:, i]
        se = col.std(ddof=1) / math.sqrt(col.size) if col.size > 1 else math.nan
        rows.append((t, float(col.mean()), se, float(col.min()), cfg.replicas))
    return [write_csv(out / "martingale.csv", ["time", "mean", "standard_error", "min", "replicas"], rows, cfg)]


def run_acceptance(cfg: ExperimentConfig, out: Path, echo=print) -> bool:
    echo(f"acceptance suite, master seed {cfg.seed}")
    results = acceptance.run_suite(out, seed=cfg.seed, threads=cfg.threads, echo=echo)
    results.append(acceptance.determinism_check(out, cfg.seed, threads=cfg.threads, echo=echo))
    rows = [(r.number, r.title, r.passed) for r in results]
    write_csv(out / "summary.csv", ["criterion", "title", "passed"], rows, cfg)
    ok = all(r.passed for r in results)
    echo(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return ok


RUNNERS = {
    "hydro": run_hydro,
    "simulate": run_simulate,
    "clt": run_clt,
    "ldp": run_ldp,
    "martingale": run_martingale,
}


def run(cfg: ExperimentConfig, out_dir) -> int:
    """Execute one configured command; returns the process exit status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.command == "acceptance":
        return EXIT_OK if run_acceptance(cfg, out) else EXIT_ACCEPTANCE
    for path in RUNNERS[cfg.command](cfg, out):
        log.info("wrote %s", path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return run(cfg, args.out_dir)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EhrenfestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end: solves both regimes and emits CSV datasets.

Each subcommand writes its tables plus a manifest.json into the output
directory. CSVs are the figure-reproduction interface: comma separated,
17 significant digits, LF line endings, one header row. Identical config
and seed give byte-identical CSVs, so the files double as regression
fixtures.

Exit codes: 0 success, 1 validation problem (bad flag, unknown key, value
out of range), 2 solver failure.
"""

from __future__ import annotations

import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load
from .first_best import (
    BracketFailure,
    QuadratureFailure,
    continuation_boundary,
    principal_value_fb,
)
from .hjbvi import Grid, NoConvergence, howard_solve
from .model import ModelParams
from .simulate import PolicyOutOfRange, SimConfig, simulate_paths

_USAGE = """\
usage: contract-solve <subcommand> [--config FILE] [--out DIR] [--set KEY=VALUE]...

subcommands:
  first-best    fb_value.csv, fb_schedule.csv
  second-best   sb_solution.csv
  simulate      paths.csv
  voi           voi.csv
  report        all of the above plus sweep.csv

The CONTRACT_SOLVE_OUT environment variable overrides --out. --set may be
repeated; keys are the config-file keys.
"""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_csv(path, header, rows) -> None:
    """One header row plus data rows, LF endings, 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


@dataclass(frozen=True)
class VoiTable:
    x: np.ndarray
    v_fb: np.ndarray
    v_sb: np.ndarray
    voi: np.ndarray


def value_of_information(params: ModelParams, x_grid, *, grid: Grid | None = None,
                         solution=None, tol: float = 1e-9, max_iter: int = 200) -> VoiTable:
    """Full-information value minus second-best value on x_grid.

    The second-best value is linearly interpolated from a solve on `grid`
    (or the supplied solution); the full-information value is solved point
    by point. x_grid must stay inside both solvers' domains.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    if grid is None:
        grid = solution.grid if solution is not None else Grid.make()
    x_fb_max = continuation_boundary(params)
    hi = min(x_fb_max, grid.x_max)
    if x_grid.size == 0:
        raise ValueError("x_grid is empty")
    if np.any(x_grid < 0.0) or np.any(x_grid > hi):
        raise ValueError(f"x_grid must lie within [0, {hi:.6g}]")
    if solution is None:
        solution = howard_solve(params, grid, tol=tol, max_iter=max_iter)
    v_fb = np.array([principal_value_fb(params, float(x)).value for x in x_grid])
    v_sb = np.interp(x_grid, grid.x, solution.w)
    return VoiTable(x=x_grid, v_fb=v_fb, v_sb=v_sb, voi=v_fb - v_sb)


def sigma_sweep(params: ModelParams, sigmas, *, grid: Grid | None = None,
                tol: float = 1e-9, max_iter: int = 200):
    """One second-best solve per sigma on a shared grid.

    Returns (solved, failures): solved is a list of (sigma, solution) in
    input order, failures a list of (sigma, message). A failed sigma does
    not abort the sweep.
    """
    import dataclasses

    sigmas = list(sigmas)
    if not sigmas:
        raise ValueError("sigma_sweep needs at least one sigma")
    if grid is None:
        grid = Grid.make()
    solved, failures = [], []
    for sg in sigmas:
        try:
            if not sg > 0.0:
                raise ValueError("sigma must be > 0")
            sol = howard_solve(dataclasses.replace(params, sigma=float(sg)),
                               grid, tol=tol, max_iter=max_iter)
            solved.append((float(sg), sol))
        except (ValueError, NoConvergence) as exc:
            failures.append((float(sg), f"{type(exc).__name__}: {exc}"))
    return solved, failures


def _grid(cfg: RunConfig) -> Grid:
    return Grid.make(x_max=cfg.grid_x_max, n=cfg.grid_n)


def _solve_sb(cfg: RunConfig):
    return howard_solve(cfg.params, _grid(cfg), tol=cfg.howard_tol,
                        max_iter=cfg.howard_max_iter)


def _run_first_best(cfg: RunConfig, outdir):
    t0 = time.perf_counter()
    xs = np.linspace(cfg.fb_x_min, cfg.fb_x_max, cfg.fb_x_n)
    rows = []
    for x in xs:
        sol = principal_value_fb(cfg.params, float(x))
        rows.append((x, sol.lambda_lag, sol.tau_star.value, sol.value))
    write_csv(os.path.join(outdir, "fb_value.csv"),
              ("x", "lambda_lag", "tau_star", "value"), rows)

    anchor = principal_value_fb(cfg.params, cfg.params.x_reserve)
    ts = np.linspace(0.0, cfg.fb_t_max, cfg.fb_t_n)
    sched = [(t, anchor.rent(t), anchor.effort(t), anchor.h_profile(t)) for t in ts]
    write_csv(os.path.join(outdir, "fb_schedule.csv"),
              ("t", "rent", "effort", "H"), sched)
    diag = {
        "schedule_x": cfg.params.x_reserve,
        "schedule_lambda_lag": anchor.lambda_lag,
        "fb_seconds": time.perf_counter() - t0,
    }
    return ["fb_value.csv", "fb_schedule.csv"], diag


def _run_second_best(cfg: RunConfig, outdir, solution=None):
    t0 = time.perf_counter()
    sol = solution if solution is not None else _solve_sb(cfg)
    g = sol.grid
    rows = zip(g.x, sol.w, sol.r_star, sol.a_star, sol.stop.astype(int))
    write_csv(os.path.join(outdir, "sb_solution.csv"),
              ("x", "w", "r_star", "a_star", "stop"), rows)
    diag = {
        "b_hat": sol.b_hat,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "k_growth": sol.k_growth,
        "sb_seconds": time.perf_counter() - t0,
    }
    return ["sb_solution.csv"], diag, sol


def _run_simulate(cfg: RunConfig, outdir, solution=None):
    t0 = time.perf_counter()
    sol = solution if solution is not None else _solve_sb(cfg)
    if not (0.0 < cfg.sim_x0 < sol.b_hat):
        raise ConfigError(
            f"sim.x0 = {cfg.sim_x0:.6g} must lie strictly inside (0, b_hat = {sol.b_hat:.6g})")
    sim_cfg = SimConfig(dt=cfg.sim_dt, horizon=cfg.sim_horizon,
                        n_paths=cfg.sim_n_paths, seed=cfg.sim_seed)
    bundles = simulate_paths(cfg.params, sol, cfg.sim_x0, sim_cfg)

    def rows():
        for b in bundles:
            n = b.w_increments.size
            last = n if not b.censored else -1  # stopped flag only on a real stop
            for k in range(n + 1):
                dw = b.w_increments[k - 1] if k > 0 else 0.0
                yield (b.path_id, b.times[k], b.j_path[k], b.x_path[k], dw,
                       1 if k == last else 0)

    write_csv(os.path.join(outdir, "paths.csv"),
              ("path_id", "t", "j", "x", "dw", "stopped"), rows())
    payoffs = np.array([b.discounted_payoff for b in bundles])
    diag = {
        "x0": cfg.sim_x0,
        "n_paths": len(bundles),
        "mc_estimate": float(payoffs.mean()),
        "mc_std_error": float(payoffs.std(ddof=1) / np.sqrt(len(bundles))) if len(bundles) > 1 else 0.0,
        "n_floor": sum(b.floor for b in bundles),
        "n_censored": sum(b.censored for b in bundles),
        "censoring_bias_bound": float(np.exp(-cfg.params.delta * cfg.sim_horizon)
                                      * (sol.k_growth + cfg.params.u_inv(sol.grid.x_max))),
        "sim_seconds": time.perf_counter() - t0,
    }
    return ["paths.csv"], diag, sol


def _run_voi(cfg: RunConfig, outdir, solution=None):
    t0 = time.perf_counter()
    sol = solution if solution is not None else _solve_sb(cfg)
    xs = np.linspace(0.0, cfg.voi_x_max, cfg.voi_x_n)
    table = value_of_information(cfg.params, xs, solution=sol)
    write_csv(os.path.join(outdir, "voi.csv"),
              ("x", "v_fb", "v_sb", "voi"),
              zip(table.x, table.v_fb, table.v_sb, table.voi))
    diag = {"voi_min": float(table.voi.min()), "voi_seconds": time.perf_counter() - t0}
    return ["voi.csv"], diag, sol


def _run_sweep(cfg: RunConfig, outdir):
    t0 = time.perf_counter()
    if not cfg.sweep_sigmas:
        raise ConfigError("sweep.sigmas must list at least one sigma")
    solved, failures = sigma_sweep(cfg.params, cfg.sweep_sigmas, grid=_grid(cfg),
                                   tol=cfg.howard_tol, max_iter=cfg.howard_max_iter)

    def rows():
        for sg, sol in solved:
            for x, w in zip(sol.grid.x, sol.w):
                yield (sg, x, w)

    write_csv(os.path.join(outdir, "sweep.csv"), ("sigma", "x", "w"), rows())
    diag = {
        "sweep_sigmas": list(cfg.sweep_sigmas),
        "sweep_failures": [f"{sg}: {msg}" for sg, msg in failures],
        "sweep_seconds": time.perf_counter() - t0,
    }
    return ["sweep.csv"], diag


def _run_report(cfg: RunConfig, outdir):
    files, diag = _run_first_best(cfg, outdir)
    sb_files, sb_diag, sol = _run_second_best(cfg, outdir)
    voi_files, voi_diag, _ = _run_voi(cfg, outdir, solution=sol)
    sweep_files, sweep_diag = _run_sweep(cfg, outdir)
    sim_files, sim_diag, _ = _run_simulate(cfg, outdir, solution=sol)
    for d in (sb_diag, voi_diag, sweep_diag, sim_diag):
        diag.update(d)
    return files + sb_files + voi_files + sweep_files + sim_files, diag


def _parse_argv(argv):
    if not argv:
        raise ConfigError("missing subcommand")
    sub = argv[0]
    if sub in ("-h", "--help", "help"):
        return None, None, None, None
    if sub not in ("first-best", "second-best", "simulate", "voi", "report"):
        raise ConfigError(f"unknown subcommand {sub!r}")
    config_path = None
    out_dir = None
    overrides = []
    i = 1
    while i < len(argv):
        flag = argv[i]
        if flag in ("--config", "--out", "--set"):
            if i + 1 >= len(argv):
                raise ConfigError(f"{flag} needs a value")
            value = argv[i + 1]
            i += 2
        else:
            raise ConfigError(f"unknown argument {flag!r}")
        if flag == "--config":
            config_path = value
        elif flag == "--out":
            out_dir = value
        else:
            overrides.append(value)
    return sub, config_path, out_dir, overrides


def cli_dispatch(argv) -> int:
    """Run one subcommand; returns the process exit code."""
    t_start = time.perf_counter()
    try:
        sub, config_path, out_dir, overrides = _parse_argv(list(argv))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_USAGE, file=sys.stderr, end="")
        return 1
    if sub is None:
        print(_USAGE, end="")
        return 0

    out_dir = os.environ.get("CONTRACT_SOLVE_OUT") or out_dir or "out"
    try:
        cfg = load(config_path, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    runners = {
        "first-best": lambda: _run_first_best(cfg, out_dir),
        "second-best": lambda: _run_second_best(cfg, out_dir)[:2],
        "simulate": lambda: _run_simulate(cfg, out_dir)[:2],
        "voi": lambda: _run_voi(cfg, out_dir)[:2],
        "report": lambda: _run_report(cfg, out_dir),
    }
    try:
        files, diag = runners[sub]()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NoConvergence, QuadratureFailure, BracketFailure, PolicyOutOfRange) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    manifest = {
        "tool_version": __version__,
        "subcommand": sub,
        "config": cfg.snapshot,
        "files": sorted(files + ["manifest.json"]),
        "diagnostics": diag,
        "timings": {"total_seconds": time.perf_counter() - t_start},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8",
              newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name in manifest["files"]:
        print(os.path.join(out_dir, name))
    return 0


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))

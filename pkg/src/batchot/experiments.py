"""Experiment runners: each reproduces one figure's data as CSV files.

Every runner resolves its config, runs with a deterministic stream keyed by
the master seed, and writes CSVs (UTF-8, header row, '.' decimal,
shortest-roundtrip floats) plus a manifest echoing the resolved config, the
library version, the wall-clock time and the number of exact-solver
invocations. Identical config and seed reproduce the CSV bytes; the
manifest is itself a loadable config.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import __version__
from . import atomic_transport as engine
from .binary import (binary_euler_error, binary_one_step_exact,
                     binom_tail_table, contour_grid, log_slope_product)
from .config import ExperimentConfig
from .flow import IntegratorSpec, cell_raster, estimate_error_grid, raster_nodes, terminal_map_many
from .measures import AtomCloud, GaussianSource, TargetMeasure, ValidationError, sep
from .plan import (cost_to_plan_lower, cost_to_plan_upper_constant,
                   estimate_cost_grid, fit_loglog_slope, rank_coupling_msq,
                   rate_k_grid, sample_plan_arrays)
from .rng import StreamKey, gaussian, uniform
from .semidiscrete import (DualWeights, build_reference_target, laguerre_indices,
                           save_reference, solve_semidiscrete_dual)
from .velocity import (BatchContext, BatchMCVelocity, IndependentVelocity,
                       concentration_bound, posterior_batch_mc_many,
                       posterior_independent_many)

__all__ = ["run_experiment", "RUNNERS"]

# Experiment ids anchoring independent stream paths.
_EXP_ID = {name: i for i, name in enumerate(
    ["rates", "plan1d", "cells", "concentration", "error_grid",
     "binary_asymptotics", "binary_contour"])}

_RATE = 2.0 * np.pi / np.sqrt(3.0)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(cfg: ExperimentConfig, out: Path, status: str,
                    wallclock: float | None = None, solver_calls: int | None = None,
                    notes: list[str] | None = None) -> None:
    lines = ["[manifest]",
             f"experiment = {cfg.experiment}",
             f"version = {__version__}",
             f"status = {status}"]
    if wallclock is not None:
        lines.append(f"wallclock_s = {wallclock:.3f}")
    if solver_calls is not None:
        lines.append(f"solver_calls = {solver_calls}")
        lines.append(f"max_solver_calls = {cfg.params['max_solver_calls']}")
    if cfg.threads is not None:
        lines.append(f"threads = {cfg.threads}")
    for note in notes or []:
        lines.append(f"note = {note}")
    lines.append("")
    lines.append(f"[{cfg.experiment}]")
    for key, value in cfg.params.items():
        if isinstance(value, list):
            lines.append(f"{key} = {','.join(str(v) for v in value)}")
        else:
            lines.append(f"{key} = {value}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _uniform_cloud(d: int, m: int, box: float, key: StreamKey) -> AtomCloud:
    """m atoms drawn once, uniformly in [-box, box]^d, then fixed."""
    u = uniform(key, m * d).reshape(m, d)
    return AtomCloud(box * (2.0 * u - 1.0))


def run_rates(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    source = GaussianSource(p["d"])
    cloud = _uniform_cloud(p["d"], p["n_atoms"], p["atom_box"], key.child(0))
    ref = build_reference_target(cloud, p["n_ref"], key.child(1))
    save_reference(ref, out / "reference")
    ks = rate_k_grid(p["k_j_min"], p["k_j_max"])
    grid = estimate_cost_grid(source, ref.target, ks, p["pair_budget"],
                              key.child(2), ref=ref)
    a_const = cost_to_plan_upper_constant(cloud) if cloud.m >= 2 else float("nan")
    w2 = float(np.sqrt(ref.w2sq))
    rows = []
    biases, gaps = [], []
    bias_ses, gap_ses = [], []
    for i, k in enumerate(ks):
        ce = grid.cost_estimate(i)
        gap, gap_se = grid.gap_estimate(i)
        bias = ce.mean - ref.w2sq
        rows.append([k, ce.mean, ce.stderr, bias, ce.stderr, gap, gap_se,
                     cost_to_plan_lower(ce.mean, w2),
                     a_const * np.sqrt(max(bias, 0.0))])
        biases.append(bias)
        gaps.append(gap)
        bias_ses.append(ce.stderr)
        gap_ses.append(gap_se)
    write_csv(out / "rates.csv",
              ["k", "cost_mean", "cost_stderr", "bias", "bias_stderr",
               "plan_gap", "plan_gap_stderr", "lower_bound", "upper_envelope"],
              rows)
    summary = [
        ["bias_slope", fit_loglog_slope(ks, biases, stderrs=bias_ses)],
        ["plan_gap_slope", fit_loglog_slope(ks, gaps, stderrs=gap_ses)],
    ]
    write_csv(out / "rates_summary.csv", ["quantity", "value"], summary)
    return []


def run_plan1d(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    source = GaussianSource(1)
    target = TargetMeasure(AtomCloud(np.asarray(p["atoms"], dtype=np.float64)[:, None]))
    edges = np.linspace(-p["x_range"], p["x_range"], p["n_bins"] + 1)
    for ik, k in enumerate(p["k_list"]):
        xs, y_idx, _, _ = sample_plan_arrays(source, target, k, p["n_pairs"], key.child(1, ik))
        rows = []
        for j in range(target.cloud.m):
            counts, _ = np.histogram(xs[y_idx == j, 0], bins=edges)
            for b in range(p["n_bins"]):
                rows.append([edges[b], edges[b + 1], j, int(counts[b])])
        write_csv(out / f"hist_k{k}.csv", ["x_lo", "x_hi", "atom", "count"], rows)
    rank_rows = []
    for ik, k in enumerate(p["rank_k_list"]):
        analytic, mc, se = rank_coupling_msq(k, p["rank_n_mc"], key.child(2, ik))
        rank_rows.append([k, analytic, mc, se])
    write_csv(out / "rank.csv", ["k", "analytic", "mc", "stderr"], rank_rows)
    return ["entropic comparison panel is out of scope and intentionally omitted"]


def run_cells(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    cloud = _uniform_cloud(2, p["n_atoms"], p["atom_box"], key.child(0))
    target = TargetMeasure(cloud)
    rect = (p["grid_lo"], p["grid_hi"], p["grid_lo"], p["grid_hi"])
    res = p["resolution"]
    spec_ref = IntegratorSpec("rk2_midpoint", p["ref_steps"])
    dual = solve_semidiscrete_dual(GaussianSource(2), target, p["dual_steps"],
                                   key.child(1), audit_n=p["audit_n"],
                                   mass_tol=p["mass_tol"])
    nodes = raster_nodes(rect, res)
    lag = laguerre_indices(nodes, cloud, dual).reshape(res, res)
    _write_raster(out / "raster_laguerre.csv", rect, res, lag, np.zeros_like(lag, dtype=bool))
    summary = []
    for ik, k in enumerate(p["k_list"]):
        if k == 1:
            model = IndependentVelocity(target)
        else:
            model = BatchMCVelocity.build(target, k, p["r_batches"], key.child(2, ik))
        atoms, und = cell_raster(model, rect, res, spec_ref, cloud)
        _write_raster(out / f"raster_k{k}.csv", rect, res, atoms, und)
        x0 = gaussian(key.child(3, ik), p["pushforward_samples"], 2)
        t_atoms, _, t_und = terminal_map_many(model, x0, spec_ref, cloud)
        freqs = np.bincount(t_atoms, minlength=cloud.m) / len(t_atoms)
        summary.append([k, float((atoms == lag).mean()), float(und.mean()),
                        float(t_und.mean()), float(np.abs(freqs - target.weights).max())])
    write_csv(out / "cells_summary.csv",
              ["k", "laguerre_agreement", "grid_undecided_frac",
               "gauss_undecided_frac", "pushforward_max_dev"], summary)
    return []


def _write_raster(path: Path, rect, res: int, atoms: np.ndarray, und: np.ndarray) -> None:
    xs = np.linspace(rect[0], rect[1], res)
    ys = np.linspace(rect[2], rect[3], res)
    rows = []
    for iy in range(res):
        for ix in range(res):
            rows.append([xs[ix], ys[iy], int(atoms[iy, ix]), int(und[iy, ix])])
    write_csv(path, ["x", "y", "atom", "undecided"], rows)


def run_concentration(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    ts = np.linspace(0.0, p["t_max"], p["t_points"])
    rows = []

    def sweep(tag, value, target, k, n_traj, ctx, key_pairs):
        source = GaussianSource(target.cloud.dim)
        xs, y_idx, _, _ = sample_plan_arrays(source, target, k, n_traj, key_pairs)
        atoms = target.cloud.atoms
        sep_val = sep(target.cloud)
        for t in ts:
            zt = (1.0 - t) * xs + t * atoms[y_idx]
            if k == 1:
                probs = posterior_independent_many(t, zt, target.cloud, target.weights)
            else:
                probs = posterior_batch_mc_many(t, zt, ctx)
            mx = probs.max(axis=1)
            bound = concentration_bound(t, target.cloud.m, sep_val) if k == 1 else float("nan")
            rows.append([tag, value, t, float(mx.mean()),
                         float(mx.std(ddof=1) / np.sqrt(n_traj)), bound])

    cloud = _uniform_cloud(p["d"], p["n_atoms"], p["atom_box"], key.child(0))
    target = TargetMeasure(cloud)
    for ik, k in enumerate(p["k_list"]):
        ctx = None
        n_traj = p["n_traj"]
        if k > 1:
            ctx = BatchContext(target, k, p["r_batches"], key.child(1, ik))
            n_traj = p["n_traj_mc"]
        sweep("k", k, target, k, n_traj, ctx, key.child(2, ik))
    for idd, d in enumerate(p["d_list"]):
        cloud_d = _uniform_cloud(d, p["n_atoms"], p["atom_box"], key.child(3, idd))
        sweep("d", d, TargetMeasure(cloud_d), 1, p["n_traj"], None, key.child(4, idd))
    write_csv(out / "concentration.csv",
              ["sweep", "value", "t", "mean_max_posterior", "stderr", "bound"], rows)
    return []


def run_error_grid(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    cloud = _uniform_cloud(p["d"], p["n_atoms"], p["atom_box"], key.child(0))
    target = TargetMeasure(cloud)
    spec_ref = IntegratorSpec("rk2_midpoint", p["ref_steps"])
    rows = []
    by_k_at_nmax = {}
    n_max = max(p["n_list"])
    for ik, k in enumerate(p["k_list"]):
        if k == 1:
            model = IndependentVelocity(target)
            n_samples = p["n_samples"]
        else:
            model = BatchMCVelocity.build(target, k, p["r_batches"], key.child(1, ik))
            n_samples = p["n_samples_mc"]
        means, ses = estimate_error_grid(model, p["n_list"], n_samples, spec_ref,
                                         key.child(2, ik))
        for n, mean, se in zip(p["n_list"], means, ses):
            rows.append([n, k, mean, se, n_samples])
            if n == n_max:
                by_k_at_nmax[k] = mean
    write_csv(out / "error_grid.csv", ["n", "k", "mean_error", "stderr", "n_samples"], rows)
    summary = []
    k1 = [(r[0], r[2]) for r in rows if r[1] == 1 and r[2] > 0]
    if len(k1) >= 2:
        summary.append(["slope_vs_n_at_k1",
                        fit_loglog_slope([r[0] for r in k1], [r[1] for r in k1],
                                         upper_half=False)])
    if len(by_k_at_nmax) >= 2 and min(by_k_at_nmax.values()) > 0:
        summary.append([f"slope_vs_k_at_n{n_max}",
                        fit_loglog_slope(list(by_k_at_nmax), list(by_k_at_nmax.values()),
                                         upper_half=False)])
    write_csv(out / "error_grid_summary.csv", ["quantity", "value"], summary)
    return []


def run_binary_asymptotics(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    rows = []
    for n in p["n_list"]:
        err = binary_euler_error(n, 1)
        lsp = log_slope_product(n) if n >= 2 else float("nan")
        rows.append([n, float(np.log(err)), lsp, float(n ** (2.0 / 3.0))])
    write_csv(out / "asymptotics.csv",
              ["n", "log_error", "log_slope_product", "n_to_2_3"], rows)
    one_rows = []
    for j in range(p["one_step_k_max_exp"] + 1):
        k = 2**j
        err = binary_one_step_exact(k)
        one_rows.append([k, err, err * np.sqrt(np.pi * k) / 2.0])
    write_csv(out / "one_step.csv", ["k", "error", "ratio_to_asymptote"], one_rows)

    target_err = binary_euler_error(p["comp_n_hi"], 1)
    k_star = None
    for k in range(1, p["comp_k_max"] + 1):
        if binary_euler_error(p["comp_n_lo"], k) <= target_err:
            k_star = k
            break
    write_csv(out / "compensation.csv",
              ["n_hi", "n_lo", "target_error", "k_star"],
              [[p["comp_n_hi"], p["comp_n_lo"], target_err,
                k_star if k_star is not None else -1]])
    return []


def run_binary_contour(cfg: ExperimentConfig, out: Path, key: StreamKey) -> list[str]:
    p = cfg.params
    n_list = list(range(1, p["n_max"] + 1))
    grid = contour_grid(n_list, p["k_list"])
    rows = []
    for jr, n in enumerate(n_list):
        for jc, k in enumerate(p["k_list"]):
            rows.append([n, k, grid[jr, jc]])
    write_csv(out / "contour.csv", ["n", "k", "error"], rows)
    return []


RUNNERS = {
    "rates": run_rates,
    "plan1d": run_plan1d,
    "cells": run_cells,
    "concentration": run_concentration,
    "error_grid": run_error_grid,
    "binary_asymptotics": run_binary_asymptotics,
    "binary_contour": run_binary_contour,
}


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run one experiment end to end; returns the output directory."""
    if cfg.experiment not in RUNNERS:
        raise ValidationError(f"unknown experiment '{cfg.experiment}'")
    out = Path(cfg.out_dir) / cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    if cfg.threads is not None:
        import numba
        numba.set_num_threads(max(1, cfg.threads))
    key = StreamKey(cfg.master_seed, (_EXP_ID[cfg.experiment],))
    _write_manifest(cfg, out, status="incomplete")
    calls0 = engine.solver_calls()
    t0 = time.perf_counter()
    notes = RUNNERS[cfg.experiment](cfg, out, key)
    wall = time.perf_counter() - t0
    used = engine.solver_calls() - calls0
    if used > cfg.params["max_solver_calls"]:
        _write_manifest(cfg, out, status="over_budget", wallclock=wall,
                        solver_calls=used, notes=notes)
        raise ValidationError(
            f"solver budget exceeded: {used} > {cfg.params['max_solver_calls']}")
    _write_manifest(cfg, out, status="complete", wallclock=wall,
                    solver_calls=used, notes=notes)
    return out

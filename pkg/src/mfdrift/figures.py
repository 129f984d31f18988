"""Matplotlib rendering for the report paths.

Every CLI command that writes delimited output can also render the
matching figures into the same directory.  Rendering is deterministic
(fixed metadata, no timestamps), so repeated runs produce byte-identical
image files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .scenario import ScenarioConfig, eval_demand

_SAVE_KW = {"dpi": 110, "metadata": {"Software": "mfdrift"}}
_MAX_FAN_PATHS = 80


def _save(fig, out_dir, name: str) -> Path:
    target = Path(out_dir) / name
    fig.savefig(target, **_SAVE_KW)
    plt.close(fig)
    return target


def render_demand(out_dir, scenario: ScenarioConfig) -> Path:
    ts = np.linspace(0.0, scenario.sim.horizon, 600)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, demand in enumerate(scenario.demands):
        ax.plot(ts, eval_demand(demand, ts), label=f"region {i}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("raw demand [veh/s]")
    ax.legend(loc="best")
    fig.tight_layout()
    return _save(fig, out_dir, "fig_demand.png")


def render_state_space(out_dir, ensemble, region: int = 0) -> Path:
    n = ensemble.stacked("n")[:, :, region]
    g = ensemble.stacked("g")[:, :, region]
    stride = max(1, n.shape[0] // _MAX_FAN_PATHS)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(n[::stride].T, g[::stride].T, lw=0.3, alpha=0.4, color="tab:blue")
    ax.set_xlabel("accumulation [veh]")
    ax.set_ylabel("exit flow [veh/s]")
    fig.tight_layout()
    return _save(fig, out_dir, f"fig_state_space_r{region}.png")


def render_paths(out_dir, ensemble, variable: str = "n", region: int = 0) -> Path:
    values = ensemble.stacked(variable)[:, :, region]
    t = ensemble.times
    stride = max(1, values.shape[0] // _MAX_FAN_PATHS)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, values[::stride].T, lw=0.3, alpha=0.4, color="tab:blue")
    ax.plot(t, values.mean(axis=0), lw=1.8, color="tab:red", label="ensemble mean")
    labels = {"n": "accumulation [veh]", "z": "exit-flow variation [veh/s]",
              "g": "exit flow [veh/s]"}
    ax.set_xlabel("time [s]")
    ax.set_ylabel(labels.get(variable, variable))
    ax.legend(loc="best")
    fig.tight_layout()
    return _save(fig, out_dir, f"fig_paths_{variable}_r{region}.png")


def render_histogram(out_dir, hist, name: str, xlabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.stairs(hist.densities, hist.edges, fill=True, alpha=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    fig.tight_layout()
    return _save(fig, out_dir, f"{name}.png")


def render_hysteresis(out_dir, curve) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ok = np.isfinite(curve.mean_decrease)
    ax.errorbar(curve.levels[ok], curve.mean_decrease[ok], yerr=curve.stderr[ok],
                fmt="o-", capsize=3)
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("accumulation level [veh]")
    ax.set_ylabel("mean exit-flow decrease [veh/s]")
    fig.tight_layout()
    return _save(fig, out_dir, "fig_hysteresis.png")


def render_heatmap(out_dir, counts, x_edges, y_edges, variable: str, pair) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4.2))
    mesh = ax.pcolormesh(x_edges, y_edges, counts.T, cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="count")
    ax.set_xlabel(f"{variable} (region {pair[0]})")
    ax.set_ylabel(f"{variable} (region {pair[1]})")
    fig.tight_layout()
    return _save(fig, out_dir, f"fig_heatmap_{variable}_{pair[0]}{pair[1]}.png")


def render_density_series(out_dir, fields) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for field in fields:
        ax.plot(field.grid.nodes, field.values, label=f"t = {field.time:g} s")
    ax.set_xlabel("exit-flow variation [veh/s]")
    ax.set_ylabel("density")
    ax.legend(loc="best")
    fig.tight_layout()
    return _save(fig, out_dir, "fig_density_evolution.png")


def render_lv_slice(out_dir, report, buf_index: int = 0) -> Path:
    n_pts, z_pts, b_pts = report.grid_shape
    n = report.states[0].reshape(report.grid_shape)[:, :, buf_index]
    z = report.states[1].reshape(report.grid_shape)[:, :, buf_index]
    lv = report.lv_at_sigma_max.reshape(report.grid_shape)[:, :, buf_index]
    fig, ax = plt.subplots(figsize=(6, 4.2))
    limit = np.max(np.abs(lv)) or 1.0
    mesh = ax.pcolormesh(n, z, lv, cmap="RdBu_r", vmin=-limit, vmax=limit,
                         shading="gouraud")
    fig.colorbar(mesh, ax=ax, label="Lyapunov drift at sigma_max")
    ax.set_xlabel("accumulation [veh]")
    ax.set_ylabel("exit-flow variation [veh/s]")
    fig.tight_layout()
    return _save(fig, out_dir, "fig_lv_slice.png")


def render_calibration_trace(out_dir, result) -> Path:
    iters = [row[0] for row in result.trace]
    best = [row[2] for row in result.trace]
    sig = [row[1] for row in result.trace]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(iters, best, "o-")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("best log-likelihood")
    ax2.plot(iters, sig, "o-")
    ax2.axhline(result.sigma_star, color="tab:red", lw=0.8)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("best sigma")
    fig.tight_layout()
    return _save(fig, out_dir, "fig_calibration_trace.png")

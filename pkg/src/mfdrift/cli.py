"""Command-line interface.

Subcommands: simulate, analyze, fpe, stability, calibrate, validate.
Exit codes: 0 success, 1 validation/configuration error, 2 runtime or
numerical error.  Set MFDRIFT_THREADS to cap worker threads.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, calibration, figures, io, stability
from .errors import ConfigError, MfdriftError
from .fokker_planck import Grid1D, admissible_dt, fpe_coefficients_1d, gaussian_density, solve_fpe_1d
from .integrator import run_ensemble
from .mfd import gamma_delta
from .scenario import list_presets, load_preset, load_scenario
from .variation import DriftMode

_MODE_ALIASES = {"euler": "euler_on_z", "latent": "latent_w",
                 "euler_on_z": "euler_on_z", "latent_w": "latent_w"}


def _add_scenario_args(parser, with_sim_overrides=True):
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario JSON file")
    src.add_argument("--preset", help=f"bundled preset ({', '.join(list_presets())})")
    if with_sim_overrides:
        parser.add_argument("--seed", type=int, help="override master seed")
        parser.add_argument("--paths", type=int, help="override path count")
        parser.add_argument("--dt", type=float, help="override integration step [s]")
        parser.add_argument("--mode", choices=sorted(_MODE_ALIASES),
                            help="integration mode (euler|latent)")
        parser.add_argument("--drift", choices=["ito", "paper"],
                            help="drift coefficient convention")


def _load(args):
    if args.config:
        return load_scenario(args.config)
    return load_preset(args.preset)


def _apply_overrides(scenario, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        changes["n_paths"] = args.paths
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if getattr(args, "mode", None):
        changes["integration_mode"] = _MODE_ALIASES[args.mode]
    if getattr(args, "drift", None):
        changes["drift_mode"] = DriftMode.parse(args.drift)
    if not changes:
        return scenario
    return replace(scenario, sim=replace(scenario.sim, **changes))


def _cmd_validate(args) -> int:
    scenario = _load(args)
    print(f"OK: scenario '{scenario.name}' with {scenario.n_regions} region(s), "
          f"{scenario.sim.n_paths} path(s), horizon {scenario.sim.horizon:g} s")
    return 0


def _cmd_simulate(args) -> int:
    scenario = _apply_overrides(_load(args), args)
    out = io.ensure_dir(args.out_dir)
    ensemble = run_ensemble(scenario)
    io.write_paths_csv(ensemble, out / "paths.csv")
    io.write_summary_json(ensemble, out / "summary.json",
                          extra={"integration_mode": scenario.sim.integration_mode,
                                 "drift_mode": scenario.sim.drift_mode.value,
                                 "dt": scenario.sim.dt,
                                 "horizon": scenario.sim.horizon})
    written = [out / "paths.csv", out / "summary.json"]
    if not args.no_figures:
        written.append(figures.render_demand(out, scenario))
        for r in range(scenario.n_regions):
            written.append(figures.render_paths(out, ensemble, "n", r))
            written.append(figures.render_paths(out, ensemble, "g", r))
            written.append(figures.render_state_space(out, ensemble, r))
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_analyze(args) -> int:
    scenario = _load(args)
    out = io.ensure_dir(args.out_dir)
    ensemble = io.read_paths_csv(args.ensemble, scenario.name)
    cfg = scenario.analysis
    written = []
    summary = {}

    for spec in cfg.exit_flow_at:
        n_star = spec["n_star"]
        window = spec.get("window", 0.02 * scenario.regions[0].n_jam)
        hist = analysis.exit_flow_distribution_at(ensemble, n_star, window,
                                                  bins=spec.get("bins", 40))
        name = f"exit_flow_at_{n_star:g}"
        io.write_histogram_csv(hist, out / f"{name}.csv")
        written.append(out / f"{name}.csv")
        if not args.no_figures:
            written.append(figures.render_histogram(out, hist, f"fig_{name}",
                                                    "exit flow [veh/s]"))
        samples_n = ensemble.stacked("n")[:, :, 0]
        samples_g = ensemble.stacked("g")[:, :, 0]
        pooled = samples_g[np.abs(samples_n - n_star) <= window]
        if pooled.size >= 3 and np.ptp(pooled) > 0:
            summary[f"skewness_at_{n_star:g}"] = analysis.sample_skewness(pooled)

    for spec in cfg.marginals:
        hist = analysis.marginal_at_time(ensemble, spec["t"], spec.get("variable", "n"),
                                         bins=spec.get("bins", 40))
        name = f"marginal_{spec.get('variable', 'n')}_t{spec['t']:g}"
        io.write_histogram_csv(hist, out / f"{name}.csv")
        written.append(out / f"{name}.csv")
        if not args.no_figures:
            written.append(figures.render_histogram(out, hist, f"fig_{name}",
                                                    spec.get("variable", "n")))

    if cfg.hysteresis is not None:
        lo, hi = cfg.hysteresis.get("lo", 0.0), cfg.hysteresis.get("hi", 0.0)
        count = cfg.hysteresis.get("count", 13)
        curve = analysis.hysteresis_curve(ensemble, np.linspace(lo, hi, count))
        io.write_hysteresis_csv(curve, out / "hysteresis.csv")
        written.append(out / "hysteresis.csv")
        if not args.no_figures:
            written.append(figures.render_hysteresis(out, curve))

    if cfg.gridlock is not None:
        t_eval = cfg.gridlock.get("t_eval", float(ensemble.times[-1]))
        fractions = {}
        for threshold in cfg.gridlock.get("thresholds", [0.75 * scenario.regions[0].n_jam]):
            fractions[f"n>={threshold:g}"] = analysis.gridlock_probability(
                ensemble, threshold, t_eval)
        summary["gridlock_fractions"] = fractions
        summary["gridlock_t_eval"] = t_eval

    for spec in cfg.heatmaps:
        pair = (spec.get("region_x", 0), spec.get("region_y", 1))
        variable = spec.get("variable", "n")
        t_range = None
        if "t_lo" in spec or "t_hi" in spec:
            t_range = (spec.get("t_lo", float(ensemble.times[0])),
                       spec.get("t_hi", float(ensemble.times[-1])))
        counts, xe, ye = analysis.joint_heatmap(ensemble, variable, pair, t_range,
                                                bins=spec.get("bins", 40))
        name = f"heatmap_{variable}_{pair[0]}{pair[1]}"
        io.write_heatmap_csv(counts, xe, ye, out / f"{name}.csv")
        written.append(out / f"{name}.csv")
        if not args.no_figures:
            written.append(figures.render_heatmap(out, counts, xe, ye, variable, pair))
        summary[f"correlation_{variable}_{pair[0]}{pair[1]}"] = \
            analysis.pearson_correlation(ensemble, variable, pair, t_range)

    import json
    with open(out / "analysis_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(out / "analysis_summary.json")
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_fpe(args) -> int:
    scenario = _load(args)
    params = scenario.regions[args.region]
    if args.sigma is not None:
        params = replace(params, sigma=args.sigma)
    gd = gamma_delta(params.boundary, args.n_fixed)
    grid = Grid1D.for_band(gd, args.cells)
    center = 0.5 * gd.delta_plus
    init = gaussian_density(grid, center, args.init_sd_frac * gd.delta_minus)
    save_times = args.times if args.times else [args.t_end]
    dt_pde = args.dt_pde
    if dt_pde is None:
        mu, diff = fpe_coefficients_1d(args.n_fixed, grid, params, scenario.sim.drift_mode)
        dt_pde = 0.9 * admissible_dt(grid, diff, mu)
    fields = solve_fpe_1d(init, args.n_fixed, params, args.t_end, dt_pde,
                          mode=scenario.sim.drift_mode, save_times=save_times)
    out = io.ensure_dir(args.out_dir)
    written = []
    for field in fields:
        target = out / f"density_t{field.time:g}.csv"
        io.write_density_csv(field, target)
        written.append(target)
    if not args.no_figures:
        written.append(figures.render_density_series(out, fields))
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_stability(args) -> int:
    scenario = _load(args)
    params = scenario.regions[args.region]
    points = stability.find_equilibrium(params, args.q_const)
    if not points:
        print("no equilibrium found on [0, n_jam] for the given demand", file=sys.stderr)
        return 2
    branch = {p.branch: p for p in points}
    eq = branch.get(args.branch) or points[0]
    n_pts, z_pts, b_pts = (int(v) for v in args.grid.split("x"))
    buf_max = args.buf_max
    if buf_max is None:
        buf_max = 2.0 * scenario.sim.horizon * max(args.q_const, 1e-9)
    report = stability.sigma_bound(eq, params, args.q_const, n_pts, z_pts, b_pts, buf_max)
    out = io.ensure_dir(args.out_dir)
    io.write_lv_report_json(report, out / "lv_report.json")
    written = [out / "lv_report.json"]
    if args.grid_csv:
        io.write_lv_grid_csv(report, out / "lv_grid.csv")
        written.append(out / "lv_grid.csv")
    if not args.no_figures:
        written.append(figures.render_lv_slice(out, report))
    print(f"equilibrium ({eq.branch}): n={eq.n_eq:.2f}, z={eq.z_eq:.4f}, buf={eq.n_buf_eq:.4g}")
    if report.vacuous:
        print(report.note)
    else:
        print(f"admissible sigma_max = {report.sigma_max:.6g} at state {report.binding_state}")
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_calibrate(args) -> int:
    scenario = _load(args)
    params = scenario.regions[args.region]
    obs = io.read_observations_csv(args.obs, params, args.constant_inflow)
    result = calibration.calibrate(obs, args.sigma_lo, args.sigma_hi, seed=args.cal_seed,
                                   n_particles=args.particles, swarm_size=args.swarm_size,
                                   iterations=args.iterations, mode=scenario.sim.drift_mode)
    out = io.ensure_dir(args.out_dir)
    io.write_calibration_json(result, out / "calibration.json")
    written = [out / "calibration.json"]
    if not args.no_figures:
        written.append(figures.render_calibration_trace(out, result))
    if result.inflow_assumed:
        print("WARNING: inflow record was absent; a constant-inflow assumption was used",
              file=sys.stderr)
    print(f"sigma* = {result.sigma_star:.6g} (log-likelihood {result.log_likelihood:.3f}, "
          f"std error {result.std_error:.3f})")
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfdrift",
        description="Stochastic macroscopic fundamental diagram toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file or preset")
    _add_scenario_args(p, with_sim_overrides=False)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("simulate", help="run a Monte Carlo ensemble")
    _add_scenario_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("analyze", help="post-process a simulated ensemble")
    _add_scenario_args(p, with_sim_overrides=False)
    p.add_argument("--ensemble", required=True, help="paths.csv from simulate")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("fpe", help="solve the 1-D variation density at a frozen accumulation")
    _add_scenario_args(p, with_sim_overrides=False)
    p.add_argument("--region", type=int, default=0)
    p.add_argument("--n-fixed", type=float, required=True)
    p.add_argument("--sigma", type=float, help="override the region noise level")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dt-pde", type=float, help="explicit step (default: 0.9x stability limit)")
    p.add_argument("--cells", type=int, default=256)
    p.add_argument("--init-sd-frac", type=float, default=0.02,
                   help="initial Gaussian width as a fraction of the band")
    p.add_argument("--times", type=float, nargs="*", help="snapshot times to save")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_fpe)

    p = sub.add_parser("stability", help="equilibrium and Lyapunov noise bound")
    _add_scenario_args(p, with_sim_overrides=False)
    p.add_argument("--region", type=int, default=0)
    p.add_argument("--q-const", type=float, required=True)
    p.add_argument("--branch", choices=["upper", "lower"], default="lower")
    p.add_argument("--grid", default="50x50x10", help="n x z x buffer grid, e.g. 50x50x10")
    p.add_argument("--buf-max", type=float)
    p.add_argument("--grid-csv", action="store_true", help="also export the LV field")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("calibrate", help="estimate the noise level from observations")
    _add_scenario_args(p, with_sim_overrides=False)
    p.add_argument("--obs", required=True, help="observations CSV (t, n[, q_in])")
    p.add_argument("--region", type=int, default=0)
    p.add_argument("--sigma-lo", type=float, default=0.005)
    p.add_argument("--sigma-hi", type=float, default=0.5)
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--cal-seed", type=int, default=0)
    p.add_argument("--swarm-size", type=int, default=12)
    p.add_argument("--iterations", type=int, default=25)
    p.add_argument("--constant-inflow", type=float,
                   help="assume this constant admitted inflow when q_in is absent")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_calibrate)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except MfdriftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())

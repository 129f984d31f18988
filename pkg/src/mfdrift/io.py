"""File formats: delimited outputs and JSON reports.

All CSV files carry a mandatory header, UTF-8 encoding, and '.' as the
decimal separator.  Floats are written with Python's shortest round-trip
representation, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import Histogram, HysteresisCurve
from .calibration import CalibrationResult, ObservationSeries
from .dynamics import RegionParams
from .errors import ConfigError
from .fokker_planck import DensityField
from .integrator import EnsembleResult, PathRecord
from .stability import LvReport

PATHS_HEADER = ["path_id", "t", "region_id", "n", "z", "g", "n_buf", "q_in"]


def _fmt(value) -> str:
    return str(float(value))


def write_paths_csv(ensemble: EnsembleResult, path) -> None:
    """Path records, one row per (path, time, region)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PATHS_HEADER)
        for rec in ensemble.paths:
            for i, t in enumerate(rec.times):
                for r in range(rec.n.shape[1]):
                    writer.writerow([rec.path_index, _fmt(t), r,
                                     _fmt(rec.n[i, r]), _fmt(rec.z[i, r]),
                                     _fmt(rec.g[i, r]), _fmt(rec.n_buf[i, r]),
                                     _fmt(rec.q_in[i, r])])


def read_paths_csv(path, scenario_name: str = "") -> EnsembleResult:
    """Reload an ensemble from its CSV (audits and seeds are not stored)."""
    data = np.genfromtxt(path, delimiter=",", names=True, encoding="utf-8")
    if data.size == 0:
        raise ConfigError(f"{path}: empty ensemble file")
    for col in PATHS_HEADER:
        if col not in (data.dtype.names or ()):
            raise ConfigError(f"{path}: missing column {col!r}")
    path_ids = np.unique(data["path_id"]).astype(int)
    regions = np.unique(data["region_id"]).astype(int)
    n_regions = len(regions)
    records = []
    for pid in path_ids:
        sel = data[data["path_id"] == pid]
        times = np.unique(sel["t"])
        shape = (len(times), n_regions)
        arrays = {name: np.empty(shape) for name in ("n", "z", "g", "n_buf", "q_in")}
        t_index = {t: i for i, t in enumerate(times)}
        for row in sel:
            i = t_index[row["t"]]
            r = int(row["region_id"])
            for name in arrays:
                arrays[name][i, r] = row[name]
        records.append(PathRecord(master_seed=-1, path_index=int(pid), times=times,
                                  n=arrays["n"], z=arrays["z"], g=arrays["g"],
                                  n_buf=arrays["n_buf"], q_in=arrays["q_in"], audit=None))
    return EnsembleResult(scenario_name=scenario_name, fingerprint="", n_regions=n_regions,
                          paths=records)


def write_summary_json(ensemble: EnsembleResult, path, extra: dict = None) -> None:
    audits = [rec.audit for rec in ensemble.paths if rec.audit is not None]
    summary = {
        "scenario": ensemble.scenario_name,
        "fingerprint": ensemble.fingerprint,
        "n_paths": len(ensemble.paths),
        "n_regions": ensemble.n_regions,
        "seeds": {"master_seed": ensemble.paths[0].master_seed,
                  "path_indices": [rec.path_index for rec in ensemble.paths]},
    }
    if audits:
        throughput = sum(float(a.throughput().sum()) for a in audits)
        summary["audit"] = {
            "band_violations": int(sum(a.band_violations for a in audits)),
            "z_clamp_events": int(sum(a.z_clamp_events for a in audits)),
            "max_flow_residual": max(float(np.max(np.abs(a.flow_residual()))) for a in audits),
            "max_buffer_residual": max(float(np.max(np.abs(a.buffer_residual()))) for a in audits),
            "total_clamp_correction": sum(float(np.sum(np.abs(a.clamp_n))) for a in audits),
            "total_throughput": throughput,
        }
    if extra:
        summary.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "density"])
        for center, dens in zip(hist.centers, hist.densities):
            writer.writerow([_fmt(center), _fmt(dens)])


def write_hysteresis_csv(curve: HysteresisCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "mean_decrease", "stderr", "count"])
        for lv, m, se, c in zip(curve.levels, curve.mean_decrease, curve.stderr, curve.counts):
            writer.writerow([_fmt(lv), _fmt(m) if np.isfinite(m) else "",
                             _fmt(se) if np.isfinite(se) else "", int(c)])


def write_heatmap_csv(counts: np.ndarray, x_edges: np.ndarray, y_edges: np.ndarray, path) -> None:
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_bin", "y_bin", "count"])
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                writer.writerow([_fmt(xc[i]), _fmt(yc[j]), int(counts[i, j])])


def write_density_csv(field: DensityField, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "density"])
        for z, d in zip(field.grid.nodes, field.values):
            writer.writerow([_fmt(z), _fmt(d)])


def write_lv_report_json(report: LvReport, path) -> None:
    payload = {
        "grid_shape": list(report.grid_shape),
        "buf_max": report.buf_max,
        "sigma_max": report.sigma_max if np.isfinite(report.sigma_max) else None,
        "binding_state": list(report.binding_state) if report.binding_state else None,
        "vacuous": report.vacuous,
        "note": report.note,
        "violation_count": report.violation_count,
        "worst_violation": list(report.worst_violation) if report.worst_violation else None,
        "sigma_floor": report.sigma_floor,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_lv_grid_csv(report: LvReport, path) -> None:
    n, z, buf = report.states
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "z", "n_buf", "lv"])
        for i in range(len(n)):
            writer.writerow([_fmt(n[i]), _fmt(z[i]), _fmt(buf[i]),
                             _fmt(report.lv_at_sigma_max[i])])


def write_calibration_json(result: CalibrationResult, path) -> None:
    payload = {
        "sigma_star": result.sigma_star,
        "log_likelihood": result.log_likelihood,
        "std_error": result.std_error,
        "n_evaluations": result.n_evaluations,
        "bounds": list(result.bounds),
        "inflow_assumed": result.inflow_assumed,
        "notes": result.notes,
        "trace": [[it, sig, ll] for it, sig, ll in result.trace],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_observations_csv(path, params: RegionParams,
                          constant_inflow: float = None) -> ObservationSeries:
    """Observation series from CSV columns (t, n[, q_in])."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "t" not in cols or "n" not in cols:
            raise ConfigError(f"{path}: observation CSV needs columns 't' and 'n'")
        has_q = "q_in" in cols
        times, n, q = [], [], []
        for row in reader:
            times.append(float(row["t"]))
            n.append(float(row["n"]))
            if has_q:
                q.append(float(row["q_in"]))
    if has_q:
        return ObservationSeries(times=np.asarray(times), n=np.asarray(n),
                                 q_in=np.asarray(q), params=params)
    if constant_inflow is None:
        raise ConfigError(f"{path}: no q_in column; pass a constant inflow assumption "
                          "to proceed (the result will be flagged)")
    return ObservationSeries.with_constant_inflow(times, n, params, constant_inflow)


def write_observations_csv(obs: ObservationSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "n", "q_in"])
        for t, n, q in zip(obs.times, obs.n, obs.q_in):
            writer.writerow([_fmt(t), _fmt(n), _fmt(q)])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p

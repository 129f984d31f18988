"""Scenario configuration: demand profiles, region setups, bundled presets.

Scenario files are strict JSON: unknown keys are rejected and every
violation is reported with its field path.  The same schema round-trips
through :func:`serialize` / :func:`load_scenario_dict`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .dynamics import RegionParams, TransferMatrix
from .errors import ConfigError
from .mfd import BoundarySpec, MfdCurveSpec
from .variation import DriftMode

_DEMAND_VALIDATION_POINTS = 2000


@dataclass(frozen=True)
class DemandSegment:
    """One piece of a demand profile: a constant block or a parabolic pulse."""

    kind: str  # "constant" | "pulse"
    level: float = 0.0
    t0: float = 0.0
    t1: float = float("inf")
    baseline: float = 0.0
    amplitude: float = 0.0
    t_peak: float = 0.0
    half_width: float = 1.0


@dataclass(frozen=True)
class DemandProfile:
    segments: tuple[DemandSegment, ...]


def eval_demand(profile: DemandProfile, t: float):
    """Raw demand at time ``t``: the sum of all active segments."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigError("demand is defined for t >= 0 only")
    total = np.zeros_like(t_arr)
    for seg in profile.segments:
        if seg.kind == "constant":
            total = total + np.where((t_arr >= seg.t0) & (t_arr <= seg.t1), seg.level, 0.0)
        else:
            shape = 1.0 - ((t_arr - seg.t_peak) / seg.half_width) ** 2
            total = total + seg.baseline + seg.amplitude * np.maximum(shape, 0.0)
    return float(total) if np.ndim(t) == 0 else total


@dataclass(frozen=True)
class InitialState:
    n: float = 0.0
    z: float = 0.0
    n_buf: float = 0.0
    n_by_dest: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt: float = 0.5
    n_paths: int = 1
    master_seed: int = 0
    integration_mode: str = "latent_w"  # "latent_w" | "euler_on_z"
    drift_mode: DriftMode = DriftMode.ITO
    record_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive", field="sim.dt")
        # horizon 0 is allowed and yields the initial state only
        if self.horizon < 0:
            raise ConfigError("horizon must be non-negative", field="sim.horizon")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1", field="sim.n_paths")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be at least 1", field="sim.record_stride")
        if self.integration_mode not in ("latent_w", "euler_on_z"):
            raise ConfigError(f"unknown integration mode {self.integration_mode!r}",
                              field="sim.integration_mode")


@dataclass(frozen=True)
class AnalysisConfig:
    """What the ``analyze`` pipeline should compute (all parts optional)."""

    exit_flow_at: tuple[dict, ...] = field(default=())
    marginals: tuple[dict, ...] = field(default=())
    hysteresis: Optional[dict] = None
    gridlock: Optional[dict] = None
    heatmaps: tuple[dict, ...] = field(default=())


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    regions: tuple[RegionParams, ...]
    demands: tuple[DemandProfile, ...]
    initials: tuple[InitialState, ...]
    transfer: TransferMatrix
    sim: SimConfig
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    def __post_init__(self):
        nr = len(self.regions)
        if len(self.demands) != nr or len(self.initials) != nr:
            raise ConfigError("regions, demands, and initial states must align")
        if self.transfer.n_regions != nr:
            raise ConfigError("transfer matrix dimension must equal the region count",
                              field="transfer_matrix")
        for i, (ini, p) in enumerate(zip(self.initials, self.regions)):
            if ini.n < 0 or ini.n_buf < 0:
                raise ConfigError("initial accumulations must be non-negative",
                                  field=f"regions[{i}].initial")
            if ini.n > p.n_jam:
                raise ConfigError("initial accumulation exceeds n_jam",
                                  field=f"regions[{i}].initial.n")
            if ini.n_by_dest is not None:
                buckets = np.asarray(ini.n_by_dest, dtype=float)
                if buckets.shape != (nr,):
                    raise ConfigError("n_by_dest needs one entry per region",
                                      field=f"regions[{i}].initial.n_by_dest")
                if abs(buckets.sum() - ini.n) > 1e-6 * max(1.0, ini.n):
                    raise ConfigError("n_by_dest must sum to the initial n",
                                      field=f"regions[{i}].initial.n_by_dest")
        for i, dem in enumerate(self.demands):
            ts = np.linspace(0.0, self.sim.horizon, _DEMAND_VALIDATION_POINTS)
            if np.any(eval_demand(dem, ts) < -1e-12):
                raise ConfigError("demand goes negative inside the horizon",
                                  field=f"regions[{i}].demand")


# ---------------------------------------------------------------------------
# strict JSON (de)serialization
# ---------------------------------------------------------------------------

def _check_keys(d: dict, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", field=path)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}", field=path)


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"missing required key {key!r}", field=path)
    return d[key]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", field=path)
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", field=path)
    return value


def _curve_from_dict(d: dict, path: str) -> MfdCurveSpec:
    family = _req(d, "family", path)
    try:
        if family == "polynomial":
            _check_keys(d, {"family", "a", "b", "c"}, path)
            return MfdCurveSpec.polynomial(_num(_req(d, "a", path), f"{path}.a"),
                                           _num(_req(d, "b", path), f"{path}.b"),
                                           _num(_req(d, "c", path), f"{path}.c"))
        if family == "exponential":
            _check_keys(d, {"family", "p1", "p2", "n_crt"}, path)
            return MfdCurveSpec.exponential(_num(_req(d, "p1", path), f"{path}.p1"),
                                            _num(_req(d, "p2", path), f"{path}.p2"),
                                            _num(_req(d, "n_crt", path), f"{path}.n_crt"))
        if family == "tabulated":
            _check_keys(d, {"family", "points"}, path)
            pts = _req(d, "points", path)
            if not isinstance(pts, list):
                raise ConfigError("points must be a list of [n, flow] pairs", field=f"{path}.points")
            return MfdCurveSpec.tabulated([(p[0], p[1]) for p in pts])
    except ConfigError as exc:
        if exc.field:
            raise
        raise ConfigError(str(exc), field=path) from None
    raise ConfigError(f"unknown curve family {family!r}", field=f"{path}.family")


def _curve_to_dict(spec: MfdCurveSpec) -> dict:
    if spec.family == "polynomial":
        return {"family": "polynomial", "a": spec.a, "b": spec.b, "c": spec.c}
    if spec.family == "exponential":
        return {"family": "exponential", "p1": spec.p1, "p2": spec.p2, "n_crt": spec.n_crt}
    return {"family": "tabulated", "points": [list(p) for p in spec.points]}


def _boundary_from_dict(d: dict, path: str) -> BoundarySpec:
    _check_keys(d, {"eta", "n_jam", "mid", "band_factor", "upper", "lower"}, path)
    eta = _num(_req(d, "eta", path), f"{path}.eta")
    n_jam = _num(_req(d, "n_jam", path), f"{path}.n_jam")
    kwargs = {}
    if "mid" in d:
        kwargs["mid"] = _curve_from_dict(d["mid"], f"{path}.mid")
    if "band_factor" in d:
        kwargs["band_factor"] = _num(d["band_factor"], f"{path}.band_factor")
    if "upper" in d:
        kwargs["upper"] = _curve_from_dict(d["upper"], f"{path}.upper")
    if "lower" in d:
        kwargs["lower"] = _curve_from_dict(d["lower"], f"{path}.lower")
    try:
        return BoundarySpec(eta=eta, n_jam=n_jam, **kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), field=path) from None


def _boundary_to_dict(spec: BoundarySpec) -> dict:
    out = {"eta": spec.eta, "n_jam": spec.n_jam}
    if spec.band_factor is not None:
        out["mid"] = _curve_to_dict(spec.mid)
        out["band_factor"] = spec.band_factor
    else:
        out["upper"] = _curve_to_dict(spec.upper)
        out["lower"] = _curve_to_dict(spec.lower)
    return out


def _segment_from_dict(d: dict, path: str) -> DemandSegment:
    kind = _req(d, "kind", path)
    if kind == "constant":
        _check_keys(d, {"kind", "level", "t0", "t1"}, path)
        return DemandSegment(kind="constant",
                             level=_num(_req(d, "level", path), f"{path}.level"),
                             t0=_num(d.get("t0", 0.0), f"{path}.t0"),
                             t1=_num(d.get("t1", float("inf")), f"{path}.t1"))
    if kind == "pulse":
        _check_keys(d, {"kind", "baseline", "amplitude", "t_peak", "half_width"}, path)
        hw = _num(_req(d, "half_width", path), f"{path}.half_width")
        if hw <= 0:
            raise ConfigError("half_width must be positive", field=f"{path}.half_width")
        return DemandSegment(kind="pulse",
                             baseline=_num(d.get("baseline", 0.0), f"{path}.baseline"),
                             amplitude=_num(_req(d, "amplitude", path), f"{path}.amplitude"),
                             t_peak=_num(_req(d, "t_peak", path), f"{path}.t_peak"),
                             half_width=hw)
    raise ConfigError(f"unknown demand segment kind {kind!r}", field=f"{path}.kind")


def _segment_to_dict(seg: DemandSegment) -> dict:
    if seg.kind == "constant":
        out = {"kind": "constant", "level": seg.level, "t0": seg.t0}
        if seg.t1 != float("inf"):
            out["t1"] = seg.t1
        return out
    return {"kind": "pulse", "baseline": seg.baseline, "amplitude": seg.amplitude,
            "t_peak": seg.t_peak, "half_width": seg.half_width}


def _initial_from_dict(d: dict, path: str) -> InitialState:
    _check_keys(d, {"n", "z", "n_buf", "n_by_dest"}, path)
    buckets = d.get("n_by_dest")
    if buckets is not None:
        if not isinstance(buckets, list):
            raise ConfigError("n_by_dest must be a list", field=f"{path}.n_by_dest")
        buckets = tuple(_num(v, f"{path}.n_by_dest[{i}]") for i, v in enumerate(buckets))
    return InitialState(n=_num(d.get("n", 0.0), f"{path}.n"),
                        z=_num(d.get("z", 0.0), f"{path}.z"),
                        n_buf=_num(d.get("n_buf", 0.0), f"{path}.n_buf"),
                        n_by_dest=buckets)


def _analysis_from_dict(d: dict, path: str) -> AnalysisConfig:
    _check_keys(d, {"exit_flow_at", "marginals", "hysteresis", "gridlock", "heatmaps"}, path)

    def _dict_list(key, allowed):
        items = d.get(key, [])
        if not isinstance(items, list):
            raise ConfigError("expected a list", field=f"{path}.{key}")
        for i, item in enumerate(items):
            _check_keys(item, allowed, f"{path}.{key}[{i}]")
        return tuple(dict(item) for item in items)

    exit_flow = _dict_list("exit_flow_at", {"n_star", "window", "bins"})
    marginals = _dict_list("marginals", {"t", "variable", "bins"})
    heatmaps = _dict_list("heatmaps", {"variable", "region_x", "region_y", "t_lo", "t_hi", "bins"})
    hysteresis = d.get("hysteresis")
    if hysteresis is not None:
        _check_keys(hysteresis, {"lo", "hi", "count"}, f"{path}.hysteresis")
        hysteresis = dict(hysteresis)
    gridlock = d.get("gridlock")
    if gridlock is not None:
        _check_keys(gridlock, {"thresholds", "t_eval"}, f"{path}.gridlock")
        gridlock = dict(gridlock)
    return AnalysisConfig(exit_flow_at=exit_flow, marginals=marginals,
                          hysteresis=hysteresis, gridlock=gridlock, heatmaps=heatmaps)


def _analysis_to_dict(a: AnalysisConfig) -> dict:
    out = {}
    if a.exit_flow_at:
        out["exit_flow_at"] = [dict(x) for x in a.exit_flow_at]
    if a.marginals:
        out["marginals"] = [dict(x) for x in a.marginals]
    if a.hysteresis is not None:
        out["hysteresis"] = dict(a.hysteresis)
    if a.gridlock is not None:
        out["gridlock"] = dict(a.gridlock)
    if a.heatmaps:
        out["heatmaps"] = [dict(x) for x in a.heatmaps]
    return out


def load_scenario_dict(data: dict) -> ScenarioConfig:
    """Build a validated scenario from parsed JSON data."""
    _check_keys(data, {"name", "regions", "transfer_matrix", "sim", "analysis"}, "<root>")
    regions_raw = _req(data, "regions", "<root>")
    if not isinstance(regions_raw, list) or not regions_raw:
        raise ConfigError("at least one region is required", field="regions")

    regions, demands, initials = [], [], []
    for i, rd in enumerate(regions_raw):
        path = f"regions[{i}]"
        _check_keys(rd, {"boundary", "sigma", "q_max", "m_soft", "demand", "initial"}, path)
        boundary = _boundary_from_dict(_req(rd, "boundary", path), f"{path}.boundary")
        try:
            params = RegionParams(boundary=boundary,
                                  sigma=_num(_req(rd, "sigma", path), f"{path}.sigma"),
                                  q_max=_num(_req(rd, "q_max", path), f"{path}.q_max"),
                                  m_soft=_num(rd.get("m_soft", 1.0), f"{path}.m_soft"))
        except ConfigError as exc:
            if exc.field:
                raise
            raise ConfigError(str(exc), field=path) from None
        segs_raw = _req(rd, "demand", path)
        if not isinstance(segs_raw, list) or not segs_raw:
            raise ConfigError("demand must be a non-empty list of segments", field=f"{path}.demand")
        segments = tuple(_segment_from_dict(s, f"{path}.demand[{j}]") for j, s in enumerate(segs_raw))
        initial = _initial_from_dict(rd.get("initial", {}), f"{path}.initial")
        regions.append(params)
        demands.append(DemandProfile(segments))
        initials.append(initial)

    theta_raw = _req(data, "transfer_matrix", "<root>")
    try:
        transfer = TransferMatrix(np.asarray(theta_raw, dtype=float))
    except (ConfigError, ValueError) as exc:
        raise ConfigError(str(exc), field="transfer_matrix") from None

    sim_raw = _req(data, "sim", "<root>")
    _check_keys(sim_raw, {"dt", "horizon", "n_paths", "master_seed", "integration_mode",
                          "drift_mode", "record_stride"}, "sim")
    try:
        sim = SimConfig(horizon=_num(_req(sim_raw, "horizon", "sim"), "sim.horizon"),
                        dt=_num(sim_raw.get("dt", 0.5), "sim.dt"),
                        n_paths=_int(sim_raw.get("n_paths", 1), "sim.n_paths"),
                        master_seed=_int(sim_raw.get("master_seed", 0), "sim.master_seed"),
                        integration_mode=sim_raw.get("integration_mode", "latent_w"),
                        drift_mode=DriftMode.parse(sim_raw.get("drift_mode", "ito")),
                        record_stride=_int(sim_raw.get("record_stride", 1), "sim.record_stride"))
    except ValueError as exc:
        raise ConfigError(str(exc), field="sim.drift_mode") from None

    analysis = _analysis_from_dict(data.get("analysis", {}), "analysis")
    name = data.get("name", "scenario")
    if not isinstance(name, str):
        raise ConfigError("name must be a string", field="name")
    return ScenarioConfig(name=name, regions=tuple(regions), demands=tuple(demands),
                          initials=tuple(initials), transfer=transfer, sim=sim,
                          analysis=analysis)


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                              field=str(path)) from None
    return load_scenario_dict(data)


def serialize(config: ScenarioConfig) -> dict:
    """Scenario back to plain JSON data; inverse of :func:`load_scenario_dict`."""
    regions = []
    for params, demand, initial in zip(config.regions, config.demands, config.initials):
        rd = {
            "boundary": _boundary_to_dict(params.boundary),
            "sigma": params.sigma,
            "q_max": params.q_max,
            "m_soft": params.m_soft,
            "demand": [_segment_to_dict(s) for s in demand.segments],
        }
        ini = {}
        if initial.n:
            ini["n"] = initial.n
        if initial.z:
            ini["z"] = initial.z
        if initial.n_buf:
            ini["n_buf"] = initial.n_buf
        if initial.n_by_dest is not None:
            ini["n_by_dest"] = list(initial.n_by_dest)
        if ini:
            rd["initial"] = ini
        regions.append(rd)
    out = {
        "name": config.name,
        "regions": regions,
        "transfer_matrix": config.transfer.theta.tolist(),
        "sim": {
            "dt": config.sim.dt,
            "horizon": config.sim.horizon,
            "n_paths": config.sim.n_paths,
            "master_seed": config.sim.master_seed,
            "integration_mode": config.sim.integration_mode,
            "drift_mode": config.sim.drift_mode.value,
            "record_stride": config.sim.record_stride,
        },
    }
    analysis = _analysis_to_dict(config.analysis)
    if analysis:
        out["analysis"] = analysis
    return out


def list_presets() -> list[str]:
    """Names of the bundled scenario presets."""
    pkg = resources.files("mfdrift") / "presets"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ScenarioConfig:
    """Load a bundled preset by name (see :func:`list_presets`)."""
    pkg = resources.files("mfdrift") / "presets" / f"{name}.json"
    try:
        text = pkg.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}") from None
    return load_scenario_dict(json.loads(text))

"""Euler-Maruyama time stepping of the coupled reservoir SDE.

Two integration modes:

``euler_on_z``
    Discretizes the variation SDE directly (the published discretization).
    A step can overshoot the band, so the variation is clamped just inside
    it and the latent value resynchronized through the inverse transform.

``latent_w``
    Advances the latent Wiener value exactly (its Euler step is exact) and
    recomputes the variation through the tanh transform against the band at
    the updated accumulation.  Boundary confinement is then exact by
    construction; this is the default mode.

Paths draw their noise from per-path streams derived by counter-based
splitting from ``(master_seed, path_index)``, so an ensemble is bit-exactly
reproducible regardless of chunking, execution order, or thread count.
Every step also feeds conservation audits (flow balance, buffer balance,
clamp corrections, band violations) that tests and reports consume.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import rng
from .dynamics import field_eval
from .errors import EnsembleError, NumericalBlowupError
from .mfd import GammaDelta
from .scenario import ScenarioConfig, SimConfig, eval_demand, serialize
from .variation import DriftMode, anchor_w, drift_diffusion, inverse_transform, transform_w_to_z

#: Relative margin keeping a clamped variation strictly inside the band.
EPS_Z_REL = 1e-6

#: Paths simulated per vectorized kernel call; fixed so results do not
#: depend on the worker-thread count.
_CHUNK = 256


@dataclass
class PathAudit:
    """Whole-run tallies per region, accumulated at every step (not just
    recorded ones)."""

    inflow: np.ndarray        # integral of admitted inflow
    outflow: np.ndarray      # integral of realized exit flow
    transfer_in: np.ndarray  # integral of flow received from other regions
    raw_demand: np.ndarray   # integral of raw demand
    delta_n: np.ndarray      # n(end) - n(0)
    delta_buf: np.ndarray    # n_buf(end) - n_buf(0)
    clamp_n: np.ndarray      # signed accumulation corrections from clamping
    clamp_buf: np.ndarray
    z_clamp_events: int      # euler mode: steps where the variation was clamped
    band_violations: int     # steps where the exit flow left [g_lw, g_up]

    def flow_residual(self) -> np.ndarray:
        """inflow + transfers - outflow - (pre-clamp accumulation change)."""
        return self.inflow + self.transfer_in - self.outflow - (self.delta_n - self.clamp_n)

    def buffer_residual(self) -> np.ndarray:
        return self.raw_demand - self.inflow - (self.delta_buf - self.clamp_buf)

    def throughput(self) -> np.ndarray:
        return self.inflow + self.outflow


@dataclass
class PathRecord:
    """Recorded samples of one path (strided in time)."""

    master_seed: int
    path_index: int
    times: np.ndarray   # (T,)
    n: np.ndarray       # (T, R)
    z: np.ndarray       # (T, R)
    g: np.ndarray       # (T, R) realized exit flow g_mi(n) + z
    n_buf: np.ndarray   # (T, R)
    q_in: np.ndarray    # (T, R) admitted inflow in effect at the sample time
    audit: PathAudit


@dataclass
class EnsembleResult:
    """Monte Carlo path collection plus the scenario fingerprint."""

    scenario_name: str
    fingerprint: str
    n_regions: int
    paths: list

    def stacked(self, field: str) -> np.ndarray:
        """(n_paths, T, R) array of one recorded field."""
        return np.stack([getattr(p, field) for p in self.paths])

    @property
    def times(self) -> np.ndarray:
        return self.paths[0].times


def scenario_fingerprint(scenario: ScenarioConfig, sim: SimConfig) -> str:
    payload = serialize(scenario)
    payload["sim"] = {
        "dt": sim.dt, "horizon": sim.horizon, "n_paths": sim.n_paths,
        "master_seed": sim.master_seed, "integration_mode": sim.integration_mode,
        "drift_mode": sim.drift_mode.value, "record_stride": sim.record_stride,
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _initial_arrays(scenario: ScenarioConfig, n_paths: int):
    nr = scenario.n_regions
    n = np.empty((nr, n_paths))
    z = np.empty((nr, n_paths))
    n_buf = np.empty((nr, n_paths))
    w = np.empty((nr, n_paths))
    buckets = np.empty((nr, nr, n_paths))
    for i, (params, ini) in enumerate(zip(scenario.regions, scenario.initials)):
        n[i] = ini.n
        z[i] = ini.z
        n_buf[i] = ini.n_buf
        if ini.n_by_dest is not None:
            for j in range(nr):
                buckets[i, j] = ini.n_by_dest[j]
        else:
            for j in range(nr):
                buckets[i, j] = ini.n * scenario.transfer.theta[i, j]
        up, lw, mi = params.boundary.curves(min(ini.n, params.n_jam))
        gd = GammaDelta(up - mi, lw - mi, up - lw, (up - mi) + (lw - mi),
                        (up - lw) < 1e-6)
        if gd.degenerate:
            # no room for variation yet; the latent value sits at the point
            # that keeps the flow on the expectation curve once the band opens
            w[i] = anchor_w(params.boundary.eta)
            z[i] = 0.0
        else:
            w[i] = inverse_transform(ini.z, gd)
    return n, buckets, z, n_buf, w


def _simulate_chunk(scenario: ScenarioConfig, sim: SimConfig,
                    path_indices: Sequence[int], q_raw_table: np.ndarray,
                    single_path_seed: Optional[int] = None,
                    noise_override: Optional[np.ndarray] = None) -> list:
    """Advance a block of paths together; one noise stream per path.

    ``noise_override`` (n_paths, steps, n_regions) substitutes the derived
    per-path draws; used for coupled step-size studies.
    """
    nr = scenario.n_regions
    n_paths = len(path_indices)
    steps = int(round(sim.horizon / sim.dt)) if sim.horizon > 0 else 0
    dt = sim.dt
    sqrt_dt = np.sqrt(dt)
    params = scenario.regions
    theta = scenario.transfer
    latent = sim.integration_mode == "latent_w"

    if noise_override is not None:
        noise = np.asarray(noise_override, dtype=float)
    else:
        noise = np.empty((n_paths, max(steps, 1), nr))
        for p, k in enumerate(path_indices):
            seed = single_path_seed if single_path_seed is not None else sim.master_seed
            stream = rng.derive_stream(rng.SeedTree(seed), "path", k)
            if steps:
                noise[p] = stream.standard_normal((steps, nr))

    n, buckets, z, n_buf, w = _initial_arrays(scenario, n_paths)
    sigma = np.array([p.sigma for p in params])[:, None]

    n_rec = steps // sim.record_stride + 1
    rec_t = np.empty(n_rec)
    rec = {name: np.empty((n_rec, nr, n_paths)) for name in ("n", "z", "g", "n_buf", "q_in")}

    audit_inflow = np.zeros((nr, n_paths))
    audit_outflow = np.zeros((nr, n_paths))
    audit_transfer = np.zeros((nr, n_paths))
    audit_raw = np.zeros((nr, n_paths))
    audit_clamp_n = np.zeros((nr, n_paths))
    audit_clamp_buf = np.zeros((nr, n_paths))
    z_clamp_events = np.zeros(n_paths, dtype=np.int64)
    violations = np.zeros(n_paths, dtype=np.int64)
    n0 = n.copy()
    buf0 = n_buf.copy()

    rec_idx = 0
    for s in range(steps + 1):
        fe = field_eval(n, buckets, z, n_buf, params, theta, q_raw_table[s], sim.drift_mode)
        for i in range(nr):
            gd = fe.bands[i]
            violations += ((z[i] < gd.gamma_minus - 1e-12) | (z[i] > gd.gamma_plus + 1e-12))
        if s % sim.record_stride == 0:
            rec_t[rec_idx] = s * dt
            rec["n"][rec_idx] = n
            rec["z"][rec_idx] = z
            rec["g"][rec_idx] = fe.g_realized
            rec["n_buf"][rec_idx] = n_buf
            rec["q_in"][rec_idx] = fe.q_in
            rec_idx += 1
        if s == steps:
            break

        audit_inflow += fe.q_in * dt
        audit_outflow += fe.out_total * dt
        audit_transfer += fe.transfer_in * dt
        audit_raw += np.asarray(q_raw_table[s])[:, None] * dt

        # accumulation and buffer advance on the drift field
        buckets_new = buckets + fe.d_by_dest * dt
        np.maximum(buckets_new, 0.0, out=buckets_new)
        n_pre = n + fe.dn * dt
        n_new = buckets_new.sum(axis=1)
        over = n_new > np.array([p.n_jam for p in params])[:, None]
        if np.any(over):
            for i, p in enumerate(params):
                mask = over[i]
                if np.any(mask):
                    scale = np.where(mask, p.n_jam / np.where(mask, n_new[i], 1.0), 1.0)
                    buckets_new[i] *= scale
                    n_new[i] = np.where(mask, p.n_jam, n_new[i])
        audit_clamp_n += n_new - n_pre

        buf_pre = n_buf + fe.dn_buf * dt
        buf_new = np.maximum(buf_pre, 0.0)
        audit_clamp_buf += buf_new - buf_pre

        xi = noise[:, s, :].T  # (R, P)
        new_bands = []
        for i, p in enumerate(params):
            up, lw, mi = p.boundary.curves(np.clip(n_new[i], 0.0, p.n_jam))
            gp = up - mi
            gm = lw - mi
            dm = up - lw
            new_bands.append(GammaDelta(gp, gm, dm, gp + gm, dm < 1e-6))

        if latent:
            for i in range(nr):
                frozen = np.asarray(fe.bands[i].degenerate)
                w[i] = np.where(frozen, w[i], w[i] + sigma[i] * sqrt_dt * xi[i])
                z[i] = transform_w_to_z(w[i], new_bands[i])
        else:
            for i in range(nr):
                gd_new = new_bands[i]
                z_step = z[i] + fe.mu_z[i] * dt + fe.s_z[i] * sqrt_dt * xi[i]
                eps = EPS_Z_REL * np.where(gd_new.degenerate, 1.0, gd_new.delta_minus)
                z_clipped = np.clip(z_step, gd_new.gamma_minus + eps, gd_new.gamma_plus - eps)
                z_clipped = np.where(gd_new.degenerate, 0.0, z_clipped)
                z_clamp_events += (z_clipped != z_step) & ~np.asarray(gd_new.degenerate)
                z[i] = z_clipped
                safe = ~np.asarray(gd_new.degenerate)
                if np.any(safe):
                    u = (2.0 * z[i] - gd_new.delta_plus) / np.where(safe, gd_new.delta_minus, 1.0)
                    w_new = np.arctanh(np.clip(u, -1 + 1e-15, 1 - 1e-15))
                    w[i] = np.where(safe, w_new, w[i])

        n = n_new
        buckets = buckets_new
        n_buf = buf_new

        if not (np.all(np.isfinite(n)) and np.all(np.isfinite(z)) and np.all(np.isfinite(n_buf))):
            bad = ~(np.isfinite(n).all(axis=0) & np.isfinite(z).all(axis=0)
                    & np.isfinite(n_buf).all(axis=0))
            failed = [path_indices[p] for p in np.nonzero(bad)[0]]
            raise NumericalBlowupError(
                f"non-finite state at step {s + 1} (t={((s + 1) * dt):g})",
                step=s + 1, path=failed)

    records = []
    for p, k in enumerate(path_indices):
        audit = PathAudit(
            inflow=audit_inflow[:, p].copy(), outflow=audit_outflow[:, p].copy(),
            transfer_in=audit_transfer[:, p].copy(), raw_demand=audit_raw[:, p].copy(),
            delta_n=n[:, p] - n0[:, p], delta_buf=n_buf[:, p] - buf0[:, p],
            clamp_n=audit_clamp_n[:, p].copy(), clamp_buf=audit_clamp_buf[:, p].copy(),
            z_clamp_events=int(z_clamp_events[p]), band_violations=int(violations[p]))
        records.append(PathRecord(
            master_seed=single_path_seed if single_path_seed is not None else sim.master_seed,
            path_index=k, times=rec_t.copy(),
            n=rec["n"][:, :, p].copy(), z=rec["z"][:, :, p].copy(),
            g=rec["g"][:, :, p].copy(), n_buf=rec["n_buf"][:, :, p].copy(),
            q_in=rec["q_in"][:, :, p].copy(), audit=audit))
    return records


def _demand_table(scenario: ScenarioConfig, sim: SimConfig) -> np.ndarray:
    steps = int(round(sim.horizon / sim.dt)) if sim.horizon > 0 else 0
    ts = np.arange(steps + 1) * sim.dt
    return np.column_stack([eval_demand(d, ts) for d in scenario.demands])


def run_path(scenario: ScenarioConfig, seed: int, sim: Optional[SimConfig] = None,
             noise: Optional[np.ndarray] = None) -> PathRecord:
    """Simulate a single path; deterministic for a fixed seed.

    ``noise`` (steps, n_regions) overrides the derived draws (coupled
    refinement studies)."""
    sim = sim if sim is not None else scenario.sim
    table = _demand_table(scenario, sim)
    override = noise[None, :, :] if noise is not None else None
    return _simulate_chunk(scenario, sim, [0], table, single_path_seed=seed,
                           noise_override=override)[0]


def _worker_count() -> int:
    env = os.environ.get("MFDRIFT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def run_ensemble(scenario: ScenarioConfig, sim: Optional[SimConfig] = None) -> EnsembleResult:
    """Simulate ``sim.n_paths`` independent paths.

    Path ``k`` always consumes the stream derived from
    ``(master_seed, k)``, and work is split into fixed-size chunks, so the
    result is byte-identical for any thread count.
    """
    sim = sim if sim is not None else scenario.sim
    table = _demand_table(scenario, sim)
    chunks = [list(range(start, min(start + _CHUNK, sim.n_paths)))
              for start in range(0, sim.n_paths, _CHUNK)]

    results: dict[int, list] = {}
    errors: list[NumericalBlowupError] = []

    def work(chunk_id: int):
        return chunk_id, _simulate_chunk(scenario, sim, chunks[chunk_id], table)

    workers = min(_worker_count(), len(chunks))
    if workers <= 1:
        iterator = (work(i) for i in range(len(chunks)))
        for cid, recs in iterator:
            results[cid] = recs
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(work, i) for i in range(len(chunks))]
            for fut in futures:
                try:
                    cid, recs = fut.result()
                    results[cid] = recs
                except NumericalBlowupError as exc:
                    errors.append(exc)
    if errors:
        failed = sorted({k for e in errors for k in (e.path or [])})
        raise EnsembleError(f"{len(failed)} path(s) diverged: {failed[:10]}"
                            + ("..." if len(failed) > 10 else ""), failed_paths=failed)

    paths = [rec for cid in sorted(results) for rec in results[cid]]
    return EnsembleResult(scenario_name=scenario.name,
                          fingerprint=scenario_fingerprint(scenario, sim),
                          n_regions=scenario.n_regions, paths=paths)


def with_overrides(scenario: ScenarioConfig, **kwargs) -> ScenarioConfig:
    """Scenario with selected sim settings replaced (seed, paths, dt, ...)."""
    sim = replace(scenario.sim, **{k: v for k, v in kwargs.items() if v is not None})
    return replace(scenario, sim=sim)


def run_frozen_band(gd: GammaDelta, sigma: float, z0: np.ndarray, horizon: float,
                    dt: float, stream, drift_mode: DriftMode = DriftMode.ITO,
                    integration_mode: str = "euler_on_z") -> np.ndarray:
    """Variation-only simulation against a fixed band (accumulation frozen).

    Serves as the Monte Carlo reference for the one-dimensional
    Fokker-Planck solves; vectorized over the initial samples ``z0``.
    """
    steps = int(round(horizon / dt))
    z = np.array(z0, dtype=float)
    sqrt_dt = np.sqrt(dt)
    if integration_mode == "latent_w":
        w = inverse_transform(z, gd)
        for _ in range(steps):
            w = w + sigma * sqrt_dt * stream.standard_normal(z.shape)
        return transform_w_to_z(w, gd)
    eps = EPS_Z_REL * gd.delta_minus
    lo, hi = gd.gamma_minus + eps, gd.gamma_plus - eps
    for _ in range(steps):
        mu, s = drift_diffusion(z, gd, sigma, drift_mode)
        z = z + mu * dt + s * sqrt_dt * stream.standard_normal(z.shape)
        np.clip(z, lo, hi, out=z)
    return z

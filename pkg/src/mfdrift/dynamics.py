"""Multi-region reservoir dynamics: gates, buffers, and transfer flows.

Each region holds an accumulation split into per-destination buckets, a
bounded exit-flow variation, and a demand buffer.  Exogenous demand passes
through the buffer and a smooth jam gate before entering; realized exit
flow is split across destinations in proportion to the bucket occupancies;
transfers join the receiver's internal bucket (trips are single-hop).

The drift/diffusion field evaluators are pure functions and come in two
forms: a scalar per-region API built on :class:`RegionState`, and the
vectorized kernel (`field_eval`) the integrator uses, where every state
component carries a trailing sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError
from .mfd import BoundarySpec, GammaDelta, gamma_delta
from .variation import DriftMode, drift_diffusion


@dataclass(frozen=True)
class RegionParams:
    """Static per-region parameters."""

    boundary: BoundarySpec
    sigma: float
    q_max: float
    m_soft: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.q_max <= 0:
            raise ConfigError("q_max must be positive")
        if self.m_soft <= 0:
            raise ConfigError("m_soft must be positive")

    @property
    def n_jam(self) -> float:
        return self.boundary.n_jam


@dataclass
class RegionState:
    """Dynamic state of one region.

    ``n_by_dest[j]`` counts vehicles currently in this region whose trips
    end in region ``j`` (index into the region list); the entries sum to
    ``n``.
    """

    n: float
    n_by_dest: np.ndarray
    z: float = 0.0
    n_buf: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        self.n_by_dest = np.asarray(self.n_by_dest, dtype=float)
        total = float(self.n_by_dest.sum())
        if self.n > 0 and abs(total - self.n) > 1e-6 * max(1.0, self.n):
            raise ConfigError("destination buckets do not sum to the accumulation")


@dataclass(frozen=True)
class TransferMatrix:
    """Row-stochastic destination shares of demand generated in each region."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ConfigError("transfer matrix must be square")
        if np.any(theta < 0):
            raise ConfigError("transfer shares must be non-negative")
        if np.any(np.abs(theta.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("transfer matrix rows must sum to 1")
        object.__setattr__(self, "theta", theta)

    @staticmethod
    def identity(n_regions: int) -> "TransferMatrix":
        return TransferMatrix(np.eye(n_regions))

    @property
    def n_regions(self) -> int:
        return self.theta.shape[0]


def psi(x, m_soft: float = 1.0):
    """Smooth sign-like gate x / sqrt(m_soft + x^2); odd, range (-1, 1)."""
    if m_soft <= 0:
        raise ConfigError("m_soft must be positive")
    x_arr = np.asarray(x, dtype=float)
    out = x_arr / np.sqrt(m_soft + x_arr * x_arr)
    return float(out) if np.ndim(x) == 0 else out


def effective_inflow(n_buf, n, q_raw, p: RegionParams):
    """Inflow actually admitted: buffer-blended demand times the jam gate.

    The jam gate is clamped at zero so inflow can never go negative once
    the accumulation reaches ``n_jam``.
    """
    gate = np.maximum(psi(p.n_jam - np.asarray(n, dtype=float), p.m_soft), 0.0)
    blend = psi(n_buf, p.m_soft)
    q_potential = p.q_max * blend + np.asarray(q_raw, dtype=float) * (1.0 - blend)
    out = q_potential * gate
    return float(out) if np.ndim(n) == 0 and np.ndim(n_buf) == 0 else out


def outflow_split(state: RegionState, g_realized: float) -> np.ndarray:
    """Per-destination flows: (bucket/n) * G; all zeros when the region is empty."""
    if state.n <= 0 or g_realized == 0.0:
        return np.zeros_like(state.n_by_dest)
    return state.n_by_dest / state.n * g_realized


@dataclass
class FieldEval:
    """Drift/diffusion field of the full network state at one instant.

    All arrays have shape (n_regions, ...) with an optional trailing
    sample axis; ``d_by_dest`` has shape (n_regions, n_regions, ...).
    """

    dn: np.ndarray
    d_by_dest: np.ndarray
    mu_z: np.ndarray
    s_z: np.ndarray
    dn_buf: np.ndarray
    q_in: np.ndarray
    g_realized: np.ndarray
    out_total: np.ndarray
    transfer_in: np.ndarray
    bands: list = field(default_factory=list)  # per-region GammaDelta


def field_eval(n, buckets, z, n_buf, params: Sequence[RegionParams],
               theta: TransferMatrix, q_raw, mode: Union[DriftMode, str] = DriftMode.ITO,
               g_mi=None) -> FieldEval:
    """Vectorized drift/diffusion evaluation.

    ``n``, ``z``, ``n_buf``: (R, ...) arrays; ``buckets``: (R, R, ...);
    ``q_raw``: length-R sequence of scalars (demand at the current time).
    """
    mode = DriftMode.parse(mode)
    n = np.asarray(n, dtype=float)
    z = np.asarray(z, dtype=float)
    n_buf = np.asarray(n_buf, dtype=float)
    buckets = np.asarray(buckets, dtype=float)
    nr = len(params)
    if theta.n_regions != nr or n.shape[0] != nr or buckets.shape[:2] != (nr, nr):
        raise ConfigError("region count mismatch between states, params, and transfer matrix")

    q_in = np.empty_like(n)
    g_real = np.empty_like(n)
    mu_z = np.empty_like(z)
    s_z = np.empty_like(z)
    bands = []
    for i, p in enumerate(params):
        up, lw, mi = p.boundary.curves(np.clip(n[i], 0.0, p.n_jam))
        gd = _band_from_curves(up, lw, mi)
        bands.append(gd)
        g_real[i] = mi + z[i]
        q_in[i] = effective_inflow(n_buf[i], n[i], q_raw[i], p)
        mu_z[i], s_z[i] = drift_diffusion(z[i], gd, p.sigma, mode)

    # outflow per (origin, destination); empty regions emit nothing
    safe_n = np.where(n > 0, n, 1.0)
    out_flows = np.where(n[:, None] > 0, buckets / safe_n[:, None] * g_real[:, None], 0.0)
    total_out = out_flows.sum(axis=1)

    # transfers from k to i join region i's internal bucket (single-hop)
    off_diag = out_flows.copy()
    idx = np.arange(nr)
    off_diag[idx, idx] = 0.0
    incoming = off_diag.sum(axis=0)

    d_by_dest = np.empty_like(buckets)
    for i in range(nr):
        for j in range(nr):
            d_by_dest[i, j] = theta.theta[i, j] * q_in[i] - out_flows[i, j]
        d_by_dest[i, i] = d_by_dest[i, i] + incoming[i]
    dn = q_in - total_out + incoming
    dn_buf = np.asarray(q_raw, dtype=float).reshape((nr,) + (1,) * (n.ndim - 1)) - q_in
    return FieldEval(dn=dn, d_by_dest=d_by_dest, mu_z=mu_z, s_z=s_z,
                     dn_buf=dn_buf, q_in=q_in, g_realized=g_real,
                     out_total=total_out, transfer_in=incoming, bands=bands)


def _band_from_curves(up, lw, mi, eps_flow=1e-6) -> GammaDelta:
    gp = np.asarray(up, dtype=float) - mi
    gm = np.asarray(lw, dtype=float) - mi
    dm = gp - gm
    return GammaDelta(gp, gm, dm, gp + gm, dm < eps_flow)


def drift_vector(states: Sequence[RegionState], params: Sequence[RegionParams],
                 theta: TransferMatrix, q_raw: Sequence[float],
                 mode: Union[DriftMode, str] = DriftMode.ITO) -> FieldEval:
    """Scalar-state wrapper around :func:`field_eval`."""
    if len(states) != len(params):
        raise ConfigError("states and params lengths differ")
    n = np.array([s.n for s in states], dtype=float)
    z = np.array([s.z for s in states], dtype=float)
    n_buf = np.array([s.n_buf for s in states], dtype=float)
    buckets = np.stack([np.asarray(s.n_by_dest, dtype=float) for s in states])
    if buckets.shape != (len(states), len(states)):
        raise ConfigError("destination buckets must have one entry per region")
    return field_eval(n, buckets, z, n_buf, params, theta, q_raw, mode)


def diffusion_vector(states: Sequence[RegionState], params: Sequence[RegionParams]) -> np.ndarray:
    """Noise amplitudes; only the variation component is stochastic and the
    per-region Wiener drivers are mutually independent."""
    out = np.empty(len(states))
    for i, (s, p) in enumerate(zip(states, params)):
        gd = gamma_delta(p.boundary, min(max(s.n, 0.0), p.n_jam))
        _, out[i] = drift_diffusion(s.z, gd, p.sigma, DriftMode.ITO)
    return out

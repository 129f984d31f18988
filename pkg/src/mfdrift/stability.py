"""Equilibria and Lyapunov drift analysis of the noise-free system.

For constant demand, the drift and diffusion of the variation vanish
simultaneously only at the band edges, so equilibria sit on the upper or
lower boundary curve; the accumulation then solves
``g_edge(n) = q_const`` and the buffer level follows from the smooth gate.

Around an equilibrium, the quadratic Lyapunov function
``V = (n - n_eq)^2 + (z - z_eq)^2 + (n_buf - n_buf_eq)^2`` has generator
value ``LV = LV2 - sigma^2 * LV1`` where LV1 collects the variation drift
polynomial and squared diffusion, and LV2 the accumulation/buffer drift
products.  ``sigma_bound`` scans a state box for the largest noise level
keeping LV non-positive.

Only the per-region (isolated reservoir) form is implemented; transfer
terms are set to zero as in the single-region reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .dynamics import RegionParams, effective_inflow, psi
from .errors import ConfigError, DegenerateBandError, SolverError
from .mfd import gamma_delta
from .variation import DriftMode, drift_diffusion

#: Residual tolerance for accepting an equilibrium (state units).
EQ_TOL = 1e-6


@dataclass(frozen=True)
class EquilibriumPoint:
    n_eq: float
    z_eq: float
    n_buf_eq: float
    branch: str  # "upper" | "lower" | "empty"
    residual_flow: float      # accumulation drift at the point
    residual_variation: float  # variation drift (Ito) and diffusion, combined max
    residual_buffer: float    # buffer drift


@dataclass
class LvReport:
    """Grid evaluation of the Lyapunov drift and the admissible noise level."""

    grid_shape: tuple
    buf_max: float
    sigma_max: float                  # inf when no state binds
    binding_state: Optional[tuple]    # (n, z, n_buf) achieving the minimum
    vacuous: bool
    note: str
    violation_count: int              # states violating for every sigma
    worst_violation: Optional[tuple]
    sigma_floor: float                # largest lower bound from noise-stabilized states
    lv_at_sigma_max: np.ndarray = field(repr=False, default=None)
    lv1: np.ndarray = field(repr=False, default=None)
    lv2: np.ndarray = field(repr=False, default=None)
    states: tuple = field(repr=False, default=None)  # (n, z, buf) flat arrays


def _check_theta(theta):
    if theta is None:
        return
    arr = np.asarray(getattr(theta, "theta", theta), dtype=float)
    if arr.shape != (1, 1) or abs(arr[0, 0] - 1.0) > 1e-12:
        raise ConfigError("stability analysis implements the isolated-region form; "
                          "theta must be trivial")


def find_equilibrium(params: RegionParams, q_const: float,
                     n_scan_points: int = 4001) -> list:
    """All equilibria of the constant-demand single region on [0, n_jam].

    Returns a list of :class:`EquilibriumPoint` (possibly empty when the
    demand exceeds what either boundary branch can discharge).
    """
    if q_const < 0:
        raise ConfigError("q_const must be non-negative")
    if q_const == 0.0:
        return [EquilibriumPoint(0.0, 0.0, 0.0, "empty", 0.0, 0.0, 0.0)]

    points = []
    n_grid = np.linspace(0.0, params.n_jam, n_scan_points)
    up, lw, mi = params.boundary.curves(n_grid)
    for branch, edge_vals in (("upper", up), ("lower", lw)):
        f = edge_vals - q_const
        sign_change = np.nonzero(np.diff(np.sign(f)) != 0)[0]
        for k in sign_change:
            a, b = n_grid[k], n_grid[k + 1]
            def edge_fn(n):
                u, l, m = params.boundary.curves(n)
                return (u if branch == "upper" else l) - q_const
            try:
                n_eq = optimize.brentq(edge_fn, a, b, xtol=1e-10 * params.n_jam)
            except ValueError:
                continue
            gd = gamma_delta(params.boundary, n_eq)
            if gd.degenerate:
                continue
            z_eq = gd.gamma_plus if branch == "upper" else gd.gamma_minus
            n_buf_eq = _buffer_level(params, n_eq, q_const)
            if n_buf_eq is None:
                continue
            omega = effective_inflow(n_buf_eq, n_eq, q_const, params)
            _, mi_eq = _edge_and_mid(params, n_eq)
            mu_eq, s_eq = drift_diffusion(z_eq, gd, 1.0, DriftMode.ITO)
            pt = EquilibriumPoint(
                n_eq=n_eq, z_eq=z_eq, n_buf_eq=n_buf_eq, branch=branch,
                residual_flow=abs(omega - (mi_eq + z_eq)),
                residual_variation=max(abs(mu_eq), abs(s_eq)),
                residual_buffer=abs(q_const - omega))
            if max(pt.residual_flow, pt.residual_buffer) > EQ_TOL * max(1.0, q_const):
                raise SolverError(
                    f"equilibrium candidate at n={n_eq:.3f} has residual "
                    f"{max(pt.residual_flow, pt.residual_buffer):.2e} above tolerance")
            points.append(pt)
    return points


def _edge_and_mid(params, n):
    up, lw, mi = params.boundary.curves(n)
    return (up, mi)


def _buffer_level(params: RegionParams, n_eq: float, q_const: float) -> Optional[float]:
    """Buffer occupancy making the admitted inflow equal the raw demand."""
    gate = max(psi(params.n_jam - n_eq, params.m_soft), 0.0)
    if gate <= 0 or params.q_max <= q_const:
        return None
    blend = q_const * (1.0 - gate) / ((params.q_max - q_const) * gate)
    if not 0.0 <= blend < 1.0:
        return None
    # invert psi: b / sqrt(m + b^2) = blend
    return math.sqrt(params.m_soft * blend * blend / (1.0 - blend * blend))


def lv_terms(state, eq: EquilibriumPoint, params: RegionParams, q_raw: float,
             theta=None):
    """(LV1, LV2) at a state (n, z, n_buf); accepts aligned arrays.

    LV1 couples the printed variation-drift polynomial with the squared
    diffusion; LV2 collects the accumulation and buffer drift products.
    """
    _check_theta(theta)
    n, z, n_buf = (np.asarray(v, dtype=float) for v in state)
    gd = gamma_delta(params.boundary, n)
    if np.any(np.asarray(gd.degenerate)):
        raise DegenerateBandError("state grid touches a degenerate band")
    v = gd.delta_plus - 2.0 * z
    poly = -gd.delta_plus + 2.0 * z + v ** 3
    diff = (gd.delta_minus ** 2 - v ** 2) / (2.0 * gd.delta_minus)
    lv1 = poly * (z - eq.z_eq) - diff ** 2

    up, lw, mi = params.boundary.curves(n)
    omega = effective_inflow(n_buf, n, q_raw, params)
    f1 = omega - (mi + z)
    f3 = q_raw - omega
    lv2 = 2.0 * (n - eq.n_eq) * f1 + 2.0 * (n_buf - eq.n_buf_eq) * f3
    if np.ndim(lv1) == 0 and np.ndim(lv2) == 0:
        return float(lv1), float(lv2)
    return lv1, lv2


def lv_total(state, eq: EquilibriumPoint, params: RegionParams, q_raw: float,
             sigma: float, theta=None):
    """Full Lyapunov drift LV = LV2 - sigma^2 * LV1."""
    lv1, lv2 = lv_terms(state, eq, params, q_raw, theta)
    return lv2 - sigma * sigma * lv1


def sigma_bound(eq: EquilibriumPoint, params: RegionParams, q_raw: float,
                n_points: int = 50, z_points: int = 50, buf_points: int = 10,
                buf_max: Optional[float] = None, theta=None,
                axes: Optional[tuple] = None) -> LvReport:
    """Scan a state box for the admissible noise level.

    States where LV1 < 0 and LV2 <= 0 cap sigma at sqrt(LV2/LV1) (above
    that the Lyapunov drift at the state flips positive); the bound is the
    minimum over the box.  States with LV1 <= 0 and LV2 > 0 violate the
    non-positivity condition for every sigma and are reported separately,
    as is the largest *lower* bound arising where LV1 > 0 and LV2 > 0
    (there extra noise is what stabilizes).
    """
    _check_theta(theta)
    if buf_max is None:
        buf_max = 200.0 * max(q_raw, 1.0)
    if axes is not None:
        # explicit box: accumulation values, normalized band positions in
        # [-1, 1], buffer values
        n_axis, u_axis, buf_axis = (np.asarray(a, dtype=float) for a in axes)
        n_points, z_points, buf_points = len(n_axis), len(u_axis), len(buf_axis)
    else:
        # keep the accumulation axis away from the degenerate band at the origin
        n_axis = np.linspace(params.n_jam / n_points, params.n_jam, n_points)
        u_axis = np.linspace(-1.0 + 1e-3, 1.0 - 1e-3, z_points)
        buf_axis = np.linspace(0.0, buf_max, buf_points)
    if n_axis.size == 0 or u_axis.size == 0 or buf_axis.size == 0:
        raise ConfigError("state grid is empty")

    gd = gamma_delta(params.boundary, n_axis)
    z_grid = (gd.delta_plus[:, None] + u_axis[None, :] * gd.delta_minus[:, None]) / 2.0
    n_grid = np.broadcast_to(n_axis[:, None, None], (n_points, z_points, buf_points))
    z_grid3 = np.broadcast_to(z_grid[:, :, None], n_grid.shape)
    buf_grid = np.broadcast_to(buf_axis[None, None, :], n_grid.shape)

    state = (n_grid.ravel(), z_grid3.ravel(), buf_grid.ravel())
    lv1, lv2 = lv_terms(state, eq, params, q_raw)

    binding = (lv1 < 0) & (lv2 <= 0)
    violating = (lv1 <= 0) & (lv2 > 0)
    floored = (lv1 > 0) & (lv2 > 0)

    sigma_max = math.inf
    binding_state = None
    vacuous = True
    note = "no binding state on the grid; the bound is vacuous"
    if binding.any():
        ratios = lv2[binding] / lv1[binding]
        k = int(np.argmin(ratios))
        sigma_max = float(np.sqrt(ratios[k]))
        idx = np.nonzero(binding)[0][k]
        binding_state = (float(state[0][idx]), float(state[1][idx]), float(state[2][idx]))
        vacuous = False
        note = "sigma_max from the binding state; above it the Lyapunov drift turns positive there"

    worst_violation = None
    if violating.any():
        idx = int(np.argmax(np.where(violating, lv2, -np.inf)))
        worst_violation = (float(state[0][idx]), float(state[1][idx]), float(state[2][idx]))

    sigma_floor = 0.0
    if floored.any():
        sigma_floor = float(np.sqrt(np.max(lv2[floored] / lv1[floored])))

    s_eval = sigma_max if math.isfinite(sigma_max) else 0.0
    lv_eval = lv2 - s_eval * s_eval * lv1
    return LvReport(grid_shape=(n_points, z_points, buf_points), buf_max=buf_max,
                    sigma_max=sigma_max, binding_state=binding_state, vacuous=vacuous,
                    note=note, violation_count=int(np.count_nonzero(violating)),
                    worst_violation=worst_violation, sigma_floor=sigma_floor,
                    lv_at_sigma_max=lv_eval, lv1=lv1, lv2=lv2, states=state)

"""Fokker-Planck solves for the exit-flow variation.

For a frozen accumulation the variation is a one-dimensional diffusion on
the open band, with drift/diffusion coefficients from
:mod:`mfdrift.variation`.  Its density obeys

    dP/dt = -d(mu P)/dz + 1/2 d^2(s^2 P)/dz^2

which is integrated here with an explicit conservative flux-form scheme on
a vertex-centered grid (half-width end volumes), so the trapezoid mass is
conserved to rounding.  Zero-flux boundaries are exact for this process:
the diffusion vanishes at the band edges and the underlying variable never
reaches them.

The full single-region state density over (accumulation, variation,
buffer) is not time-stepped; :func:`fpe_residual_full` evaluates the
right-hand side of that three-dimensional equation on a grid so candidate
densities can be tested against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import RegionParams, effective_inflow
from .errors import ConfigError, DegenerateBandError, DomainError, StabilityDtError
from .mfd import GammaDelta, gamma_delta
from .variation import DriftMode, drift_diffusion

#: Same relative edge margin the integrator uses for clamping.
EPS_Z_REL = 1e-6

#: Explicit-step safety factor against the diffusive stability limit.
CFL_SAFETY = 0.4


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of sample points on the open variation band.

    End control volumes are half-width, so ``trapezoid(values, nodes)`` is
    the exactly conserved mass functional of the solver.
    """

    lower: float
    upper: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 16:
            raise ConfigError("grid needs at least 16 cells")
        if not self.upper > self.lower:
            raise ConfigError("grid upper bound must exceed the lower bound")

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / (self.n_cells - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n_cells)

    @staticmethod
    def for_band(gd: GammaDelta, n_cells: int = 256) -> "Grid1D":
        if bool(np.any(gd.degenerate)):
            raise DegenerateBandError("cannot build a grid on a degenerate band")
        eps = EPS_Z_REL * gd.delta_minus
        return Grid1D(gd.gamma_minus + eps, gd.gamma_plus - eps, n_cells)


@dataclass
class DensityField:
    """Gridded probability density of the variation at one time."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0
    flushed_mass: float = 0.0  # cumulative negative-undershoot mass removed

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid.nodes))

    def normalized(self) -> "DensityField":
        return DensityField(self.grid, self.values / self.mass(), self.time)


def gaussian_density(grid: Grid1D, center: float, sd: float) -> DensityField:
    """Normalized Gaussian bump on the grid (initial-condition helper)."""
    z = grid.nodes
    values = np.exp(-0.5 * ((z - center) / sd) ** 2)
    field = DensityField(grid, values, 0.0)
    return field.normalized()


def fpe_coefficients_1d(n_fixed: float, grid: Grid1D, params: RegionParams,
                        mode: DriftMode = DriftMode.ITO):
    """Per-node drift and squared-diffusion arrays at a frozen accumulation.

    The diffusion array is ``s(z)^2``; the operator uses half of it, per the
    standard Fokker-Planck convention for unit-variance Brownian drivers.
    """
    gd = gamma_delta(params.boundary, n_fixed)
    if gd.degenerate:
        raise DegenerateBandError(f"band is degenerate at n={n_fixed:g}")
    if grid.lower <= gd.gamma_minus or grid.upper >= gd.gamma_plus:
        raise DomainError("grid must lie strictly inside the open band")
    mu, s = drift_diffusion(grid.nodes, gd, params.sigma, mode)
    return mu, s * s


def _flux(p: np.ndarray, mu: np.ndarray, diff: np.ndarray, h: float) -> np.ndarray:
    """Face fluxes F = mu*P - 1/2 d(s^2 P)/dz between adjacent nodes."""
    mu_face = 0.5 * (mu[:-1] + mu[1:])
    p_face = 0.5 * (p[:-1] + p[1:])
    dp = (diff[1:] * p[1:] - diff[:-1] * p[:-1]) / h
    return mu_face * p_face - 0.5 * dp


def admissible_dt(grid: Grid1D, diffusion: np.ndarray, drift: np.ndarray) -> float:
    """Largest explicit step honoring the diffusive and advective limits."""
    h = grid.h
    d_max = float(np.max(diffusion))
    limits = []
    if d_max > 0:
        limits.append(CFL_SAFETY * h * h / d_max)
    mu_max = float(np.max(np.abs(drift)))
    if mu_max > 0:
        limits.append(0.5 * h / mu_max)
    return min(limits) if limits else np.inf


def solve_fpe_1d(initial: DensityField, n_fixed: float, params: RegionParams,
                 t_end: float, dt_pde: float, mode: DriftMode = DriftMode.ITO,
                 save_times: Optional[Sequence[float]] = None) -> list:
    """Evolve the variation density at a frozen accumulation.

    Returns the density at each requested save time (default: t_end only).
    Mass is conserved by construction; negative undershoots are flushed to
    zero and the mass renormalized (the correction is tracked on the
    returned fields as ``flushed_mass``).
    """
    grid = initial.grid
    mass0 = initial.mass()
    if abs(mass0 - 1.0) > 1e-6:
        raise DomainError(f"initial density mass is {mass0:.8f}, expected 1")
    mu, diff = fpe_coefficients_1d(n_fixed, grid, params, mode)
    dt_max = admissible_dt(grid, diff, mu)
    if dt_pde > dt_max:
        raise StabilityDtError(
            f"dt_pde={dt_pde:g} exceeds the stability limit; use dt <= {dt_max:.3e}",
            admissible_dt=dt_max)

    h = grid.h
    inv_w = np.full(grid.n_cells, 1.0 / h)
    inv_w[0] = inv_w[-1] = 2.0 / h  # half-width end volumes

    saves = sorted(save_times) if save_times else [t_end]
    if any(ts < 0 or ts > t_end + 1e-9 for ts in saves):
        raise DomainError("save times must lie in [0, t_end]")

    p = initial.values.astype(float).copy()
    t = 0.0
    flushed_total = 0.0
    out = []
    save_iter = iter(saves)
    next_save = next(save_iter, None)
    steps = int(np.ceil(t_end / dt_pde)) if t_end > 0 else 0
    for k in range(steps + 1):
        while next_save is not None and (t >= next_save - 0.5 * dt_pde or k == steps):
            out.append(DensityField(grid, p.copy(), next_save, flushed_total))
            next_save = next(save_iter, None)
        if k == steps:
            break
        flux = _flux(p, mu, diff, h)
        div = np.empty_like(p)
        div[0] = flux[0] * inv_w[0]
        div[1:-1] = (flux[1:] - flux[:-1]) * inv_w[1:-1]
        div[-1] = -flux[-1] * inv_w[-1]
        p -= dt_pde * div
        negative = p < 0.0
        if negative.any():
            mass_before = np.trapezoid(p, grid.nodes)
            flushed_total += float(-np.sum(p[negative]) * h)
            p[negative] = 0.0
            mass_after = np.trapezoid(p, grid.nodes)
            if mass_after > 0:
                p *= mass_before / mass_after
        t += dt_pde
    return out


def fpe_residual_full(p_grid: np.ndarray, n_nodes: np.ndarray, z_nodes: np.ndarray,
                      buf_nodes: np.ndarray, params: RegionParams, q_raw: float,
                      mode: DriftMode = DriftMode.ITO) -> np.ndarray:
    """Right-hand side of the full single-region state-density equation.

    ``p_grid`` has shape (len(n_nodes), len(z_nodes), len(buf_nodes)).
    Drift divergences in accumulation and buffer use central differences
    with zero ghost values; the variation direction uses the same
    conservative flux assembly as the 1-D solver, so a density embedded on
    a single (n, buffer) slab reproduces the 1-D operator exactly and the
    grid integral of the residual vanishes for densities supported away
    from the box boundary.  The time-stepping of this three-dimensional
    problem is out of scope; this evaluator exists to test candidate
    densities.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    shape = (len(n_nodes), len(z_nodes), len(buf_nodes))
    if p_grid.shape != shape:
        raise DomainError(f"density shape {p_grid.shape} does not match the grid {shape}")
    if min(shape) < 3:
        raise DomainError("residual stencil needs at least 3 nodes per dimension")
    n_nodes = np.asarray(n_nodes, dtype=float)
    z_nodes = np.asarray(z_nodes, dtype=float)
    buf_nodes = np.asarray(buf_nodes, dtype=float)

    # drift fields on the rectilinear grid
    up, lw, mi = params.boundary.curves(np.clip(n_nodes, 0.0, params.n_jam))
    q_in = np.empty((len(n_nodes), len(buf_nodes)))
    for j, b in enumerate(buf_nodes):
        q_in[:, j] = effective_inflow(b, n_nodes, q_raw, params)
    f_n = q_in[:, None, :] - (mi[:, None, None] + z_nodes[None, :, None])  # (N, Z, B)
    f_buf = q_raw - q_in  # (N, B)

    mu_z = np.empty((len(n_nodes), len(z_nodes)))
    diff_z = np.empty_like(mu_z)
    for i in range(len(n_nodes)):
        gd = GammaDelta(up[i] - mi[i], lw[i] - mi[i], up[i] - lw[i],
                        (up[i] - mi[i]) + (lw[i] - mi[i]), (up[i] - lw[i]) < 1e-6)
        if bool(gd.degenerate):
            raise DegenerateBandError(f"band degenerate at grid accumulation {n_nodes[i]:g}")
        mu, s = drift_diffusion(z_nodes, gd, params.sigma, mode)
        mu_z[i] = mu
        diff_z[i] = s * s

    residual = np.zeros_like(p_grid)

    # accumulation divergence: central differences, zero ghosts
    h_n = n_nodes[1] - n_nodes[0]
    a = f_n * p_grid
    residual[1:-1] -= (a[2:] - a[:-2]) / (2.0 * h_n)
    residual[0] -= a[1] / (2.0 * h_n)
    residual[-1] -= -a[-2] / (2.0 * h_n)

    # buffer divergence
    h_b = buf_nodes[1] - buf_nodes[0]
    c = f_buf[:, None, :] * p_grid
    residual[:, :, 1:-1] -= (c[:, :, 2:] - c[:, :, :-2]) / (2.0 * h_b)
    residual[:, :, 0] -= c[:, :, 1] / (2.0 * h_b)
    residual[:, :, -1] -= -c[:, :, -2] / (2.0 * h_b)

    # variation direction: conservative flux form with zero-flux outer faces
    h_z = z_nodes[1] - z_nodes[0]
    inv_w = np.full(len(z_nodes), 1.0 / h_z)
    inv_w[0] = inv_w[-1] = 2.0 / h_z
    for i in range(len(n_nodes)):
        for j in range(len(buf_nodes)):
            flux = _flux(p_grid[i, :, j], mu_z[i], diff_z[i], h_z)
            residual[i, 0, j] -= flux[0] * inv_w[0]
            residual[i, 1:-1, j] -= (flux[1:] - flux[:-1]) * inv_w[1:-1]
            residual[i, -1, j] -= -flux[-1] * inv_w[-1]
    return residual

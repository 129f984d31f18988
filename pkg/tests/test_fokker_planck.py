import dataclasses

import numpy as np
import pytest

from mfdrift import rng
from mfdrift.dynamics import RegionParams
from mfdrift.errors import ConfigError, DegenerateBandError, DomainError, StabilityDtError
from mfdrift.fokker_planck import (DensityField, Grid1D, admissible_dt, fpe_coefficients_1d,
                                   fpe_residual_full, gaussian_density, solve_fpe_1d)
from mfdrift.integrator import run_frozen_band
from mfdrift.mfd import gamma_delta
from mfdrift.variation import DriftMode, drift_diffusion


@pytest.fixture(scope="module")
def band_setup(poly_params):
    gd = gamma_delta(poly_params.boundary, 4000.0)
    grid = Grid1D.for_band(gd, 128)
    return gd, grid


class TestGrid:
    def test_minimum_cells(self, band_setup):
        gd, _ = band_setup
        with pytest.raises(ConfigError):
            Grid1D.for_band(gd, 8)

    def test_bounds_inside_band(self, band_setup):
        gd, grid = band_setup
        assert gd.gamma_minus < grid.lower < grid.upper < gd.gamma_plus

    def test_degenerate_band_rejected(self, poly_params):
        gd = gamma_delta(poly_params.boundary, 0.0)
        with pytest.raises(DegenerateBandError):
            Grid1D.for_band(gd)


class TestCoefficients:
    def test_boundary_diffusion_vanishes(self, poly_params, band_setup):
        _, grid = band_setup
        mu, diff = fpe_coefficients_1d(4000.0, grid, poly_params)
        assert diff[0] < 1e-10 and diff[-1] < 1e-10

    def test_midpoint_drift_zero(self, poly_params, band_setup):
        gd, grid = band_setup
        mid = 0.5 * gd.delta_plus
        mu, _ = fpe_coefficients_1d(4000.0, grid, poly_params)
        assert np.interp(mid, grid.nodes, mu) == pytest.approx(0.0, abs=1e-7)

    def test_matches_variation_coefficients(self, poly_params, band_setup):
        gd, grid = band_setup
        mu, diff = fpe_coefficients_1d(4000.0, grid, poly_params)
        mu_ref, s_ref = drift_diffusion(grid.nodes, gd, poly_params.sigma)
        assert np.allclose(mu, mu_ref)
        assert np.allclose(diff, s_ref ** 2)

    def test_degenerate_rejected(self, poly_params, band_setup):
        _, grid = band_setup
        with pytest.raises(DegenerateBandError):
            fpe_coefficients_1d(0.0, grid, poly_params)


class TestSolver:
    def test_mass_conserved_over_many_steps(self, poly_params, band_setup):
        gd, grid = band_setup
        init = gaussian_density(grid, 0.5 * gd.delta_plus, 0.05 * gd.delta_minus)
        mu, diff = fpe_coefficients_1d(4000.0, grid, poly_params)
        dt = 0.9 * admissible_dt(grid, diff, mu)
        fields = solve_fpe_1d(init, 4000.0, poly_params, 10_000 * dt, dt)
        assert fields[-1].mass() == pytest.approx(1.0, abs=1e-6)
        assert np.all(fields[-1].values >= 0.0)

    def test_cfl_violation_names_admissible_dt(self, poly_params, band_setup):
        gd, grid = band_setup
        init = gaussian_density(grid, 0.5 * gd.delta_plus, 0.05 * gd.delta_minus)
        with pytest.raises(StabilityDtError) as err:
            solve_fpe_1d(init, 4000.0, poly_params, 10.0, 10.0)
        assert err.value.admissible_dt is not None
        assert err.value.admissible_dt < 10.0

    def test_initial_mass_checked(self, poly_params, band_setup):
        gd, grid = band_setup
        bad = DensityField(grid, np.ones(grid.n_cells), 0.0)
        with pytest.raises(DomainError):
            solve_fpe_1d(bad, 4000.0, poly_params, 1.0, 1e-3)

    def test_zero_noise_point_mass_stationary(self, poly_params, band_setup):
        gd, grid = band_setup
        params = dataclasses.replace(poly_params, sigma=0.0)
        init = gaussian_density(grid, 0.5 * gd.delta_plus, 0.03 * gd.delta_minus)
        fields = solve_fpe_1d(init, 4000.0, params, 50.0, 0.05)
        assert np.allclose(fields[-1].values, init.values, atol=1e-12)

    def test_symmetry_and_monte_carlo_agreement(self, poly_params, band_setup):
        gd, grid = band_setup
        params = dataclasses.replace(poly_params, sigma=0.05)
        mid = 0.5 * gd.delta_plus
        init = gaussian_density(grid, mid, 0.02 * gd.delta_minus)
        mu, diff = fpe_coefficients_1d(4000.0, grid, params)
        dt = 0.9 * admissible_dt(grid, diff, mu)
        field = solve_fpe_1d(init, 4000.0, params, 200.0, dt)[-1]

        # symmetric band: density stays symmetric about the midpoint
        mirrored = field.values[::-1]
        l1_asym = np.trapezoid(np.abs(field.values - mirrored), grid.nodes)
        assert l1_asym < 1e-3

        # independent oracle: discretized variation process, frozen band
        stream = rng.derive_stream(rng.SeedTree(11), "fpe-oracle")
        cum = np.concatenate([[0.0], np.cumsum(
            0.5 * (init.values[1:] + init.values[:-1]) * grid.h)])
        cum /= cum[-1]
        z0 = np.interp(stream.uniform(size=100_000), cum, grid.nodes)
        samples = run_frozen_band(gd, 0.05, z0, 200.0, 0.25, stream)
        edges = np.linspace(grid.lower, grid.upper, 61)
        mc_prob = np.histogram(samples, bins=edges)[0] / samples.size
        centers = 0.5 * (edges[:-1] + edges[1:])
        pde_prob = np.interp(centers, grid.nodes, field.values) * np.diff(edges)
        pde_prob /= pde_prob.sum()
        assert np.abs(mc_prob - pde_prob).sum() < 0.05

    def test_variance_grows_from_midpoint_start(self, poly_params, band_setup):
        gd, grid = band_setup
        init = gaussian_density(grid, 0.5 * gd.delta_plus, 0.02 * gd.delta_minus)
        mu, diff = fpe_coefficients_1d(4000.0, grid, poly_params)
        dt = 0.9 * admissible_dt(grid, diff, mu)
        fields = solve_fpe_1d(init, 4000.0, poly_params, 120.0, dt,
                              save_times=[30.0, 60.0, 90.0, 120.0])
        variances = []
        for f in fields:
            m = np.trapezoid(f.values * grid.nodes, grid.nodes)
            variances.append(np.trapezoid(f.values * (grid.nodes - m) ** 2, grid.nodes))
        assert all(b >= a - 1e-12 for a, b in zip(variances, variances[1:]))


class TestFullResidual:
    def _grids(self, poly_params):
        n_nodes = np.linspace(3000.0, 5000.0, 9)
        gd = gamma_delta(poly_params.boundary, 4000.0)
        eps = 0.02 * gd.delta_minus
        z_nodes = np.linspace(gd.gamma_minus + eps, gd.gamma_plus - eps, 17)
        buf_nodes = np.linspace(0.0, 8.0, 7)
        return n_nodes, z_nodes, buf_nodes

    def _interior_density(self, n_nodes, z_nodes, buf_nodes):
        def bump(x):
            s = (x - x[0]) / (x[-1] - x[0])
            out = np.sin(np.pi * s) ** 2
            out[:2] = out[-2:] = 0.0  # two-node margin: all boundary stencils see zeros
            return out
        p = (bump(n_nodes)[:, None, None] * bump(z_nodes)[None, :, None]
             * bump(buf_nodes)[None, None, :])
        return p / p.sum()

    def test_integral_vanishes_for_interior_density(self, poly_params):
        n_nodes, z_nodes, buf_nodes = self._grids(poly_params)
        p = self._interior_density(n_nodes, z_nodes, buf_nodes)
        res = fpe_residual_full(p, n_nodes, z_nodes, buf_nodes, poly_params, q_raw=2.0)
        total = res.sum() * (n_nodes[1] - n_nodes[0]) * (z_nodes[1] - z_nodes[0]) \
            * (buf_nodes[1] - buf_nodes[0])
        assert abs(total) < 1e-10 * np.abs(res).max()

    def test_slab_density_matches_1d_operator(self, poly_params):
        n_nodes, z_nodes, buf_nodes = self._grids(poly_params)
        gd = gamma_delta(poly_params.boundary, float(n_nodes[4]))
        line = np.exp(-0.5 * ((z_nodes - 0.5 * gd.delta_plus) / (0.1 * gd.delta_minus)) ** 2)
        p = np.zeros((len(n_nodes), len(z_nodes), len(buf_nodes)))
        p[4, :, 2] = line
        res = fpe_residual_full(p, n_nodes, z_nodes, buf_nodes, poly_params, q_raw=2.0)

        # same assembly on the standalone line
        grid = Grid1D(float(z_nodes[0]), float(z_nodes[-1]), len(z_nodes))
        mu, diff = fpe_coefficients_1d(float(n_nodes[4]), grid, poly_params)
        from mfdrift.fokker_planck import _flux
        h = grid.h
        flux = _flux(line, mu, diff, h)
        expected = np.empty_like(line)
        expected[0] = -flux[0] * 2.0 / h
        expected[1:-1] = -(flux[1:] - flux[:-1]) / h
        expected[-1] = flux[-1] * 2.0 / h
        assert np.allclose(res[4, :, 2], expected, rtol=1e-12, atol=1e-14)

    def test_no_zero_noise_residual_in_z_for_uniform_line(self, poly_params):
        # sigma = 0 kills both variation coefficients: the z-direction of the
        # operator must vanish identically for any density
        params = dataclasses.replace(poly_params, sigma=0.0)
        n_nodes, z_nodes, buf_nodes = self._grids(poly_params)
        p = self._interior_density(n_nodes, z_nodes, buf_nodes)
        res = fpe_residual_full(p, n_nodes, z_nodes, buf_nodes, params, q_raw=2.0)
        res_nonzero = fpe_residual_full(p, n_nodes, z_nodes, buf_nodes, poly_params, q_raw=2.0)
        # the difference isolates the z-direction contribution
        assert not np.allclose(res, res_nonzero)

    def test_shape_mismatch_rejected(self, poly_params):
        n_nodes, z_nodes, buf_nodes = self._grids(poly_params)
        with pytest.raises(DomainError):
            fpe_residual_full(np.zeros((2, 2, 2)), n_nodes, z_nodes, buf_nodes,
                              poly_params, q_raw=2.0)

    def test_coarse_grid_rejected(self, poly_params):
        with pytest.raises(DomainError):
            fpe_residual_full(np.zeros((2, 2, 2)), np.array([0.0, 1.0]),
                              np.array([0.0, 1.0]), np.array([0.0, 1.0]),
                              poly_params, q_raw=2.0)

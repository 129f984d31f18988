import dataclasses
import math

import numpy as np
import pytest
from scipy import stats as sps

from mfdrift import rng
from mfdrift.dynamics import RegionParams, TransferMatrix
from mfdrift.errors import ConfigError, DegenerateBandError
from mfdrift.mfd import characteristic_curves, gamma_delta
from mfdrift.stability import EquilibriumPoint, find_equilibrium, lv_terms, lv_total, sigma_bound


@pytest.fixture(scope="module")
def eq_lower(poly_params):
    points = find_equilibrium(poly_params, 2.0)
    return next(p for p in points if p.branch == "lower")


class TestEquilibria:
    def test_zero_demand_empty_network(self, poly_params):
        points = find_equilibrium(poly_params, 0.0)
        assert len(points) == 1
        eq = points[0]
        assert (eq.n_eq, eq.z_eq, eq.n_buf_eq) == (0.0, 0.0, 0.0)

    def test_branch_solutions_match_boundary_curves(self, poly_params):
        # oracle: at the equilibrium, the relevant boundary curve equals demand
        for eq in find_equilibrium(poly_params, 2.0):
            up, lw, mi = characteristic_curves(poly_params.boundary, eq.n_eq)
            edge = up if eq.branch == "upper" else lw
            assert edge == pytest.approx(2.0, abs=1e-7)
            gd = gamma_delta(poly_params.boundary, eq.n_eq)
            target = gd.gamma_plus if eq.branch == "upper" else gd.gamma_minus
            assert eq.z_eq == pytest.approx(target, abs=1e-9)

    def test_residuals_below_tolerance(self, poly_params):
        for eq in find_equilibrium(poly_params, 2.0):
            assert eq.residual_flow <= 1e-6
            assert eq.residual_buffer <= 1e-6
            assert eq.residual_variation <= 1e-6

    def test_demand_above_capacity_no_uncongested_root(self, poly_params):
        # demand above the maximum of the upper boundary: no equilibrium at all
        points = find_equilibrium(poly_params, 100.0)
        assert points == []

    def test_falling_branch_roots_found(self, poly_params):
        # a demand below capacity crosses each boundary curve twice
        points = find_equilibrium(poly_params, 6.0)
        lower = [p for p in points if p.branch == "lower"]
        assert len(lower) == 2
        assert lower[0].n_eq < 4312 < lower[1].n_eq

    def test_buffer_is_small_positive(self, eq_lower):
        assert 0.0 < eq_lower.n_buf_eq < 1e-6


class TestLvTerms:
    def test_lv2_zero_at_equilibrium(self, poly_params, eq_lower):
        lv1, lv2 = lv_terms((eq_lower.n_eq, eq_lower.z_eq, eq_lower.n_buf_eq),
                            eq_lower, poly_params, 2.0)
        assert lv2 == pytest.approx(0.0, abs=1e-9)
        assert lv1 == pytest.approx(0.0, abs=1e-9)

    def test_diffusion_part_zero_at_band_edge(self, poly_params, eq_lower):
        # z at the equilibrium edge: the squared-diffusion part of LV1 drops out
        gd = gamma_delta(poly_params.boundary, 3000.0)
        lv1, _ = lv_terms((3000.0, gd.gamma_minus, 0.0), eq_lower, poly_params, 2.0)
        v = gd.delta_plus - 2.0 * gd.gamma_minus
        poly = -gd.delta_plus + 2.0 * gd.gamma_minus + v ** 3
        assert lv1 == pytest.approx(poly * (gd.gamma_minus - eq_lower.z_eq), rel=1e-12)

    def test_identity_lv_total(self, poly_params, eq_lower):
        stream = rng.derive_stream(rng.SeedTree(21), "lv")
        for _ in range(200):
            n = stream.uniform(100.0, 9900.0)
            gd = gamma_delta(poly_params.boundary, n)
            z = 0.5 * gd.delta_plus + stream.uniform(-0.49, 0.49) * gd.delta_minus
            buf = stream.uniform(0.0, 100.0)
            sigma = stream.uniform(0.0, 2.0)
            lv1, lv2 = lv_terms((n, z, buf), eq_lower, poly_params, 2.0)
            lv = lv_total((n, z, buf), eq_lower, poly_params, 2.0, sigma)
            assert lv == pytest.approx(lv2 - sigma * sigma * lv1, rel=1e-10, abs=1e-12)

    def test_sigma_zero_reduces_to_lv2(self, poly_params, eq_lower):
        state = (2000.0, 0.1, 5.0)
        _, lv2 = lv_terms(state, eq_lower, poly_params, 2.0)
        assert lv_total(state, eq_lower, poly_params, 2.0, 0.0) == pytest.approx(lv2)

    def test_monotone_in_sigma_where_lv1_positive(self, poly_params, eq_lower):
        stream = rng.derive_stream(rng.SeedTree(22), "mono")
        found = 0
        while found < 20:
            n = stream.uniform(200.0, 9000.0)
            gd = gamma_delta(poly_params.boundary, n)
            z = 0.5 * gd.delta_plus + stream.uniform(-0.49, 0.49) * gd.delta_minus
            buf = stream.uniform(0.0, 50.0)
            lv1, _ = lv_terms((n, z, buf), eq_lower, poly_params, 2.0)
            if lv1 > 0:
                found += 1
                values = [lv_total((n, z, buf), eq_lower, poly_params, 2.0, s)
                          for s in (0.0, 0.5, 1.0, 2.0)]
                assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_degenerate_band_rejected(self, poly_params, eq_lower):
        with pytest.raises(DegenerateBandError):
            lv_terms((0.0, 0.0, 0.0), eq_lower, poly_params, 2.0)

    def test_nontrivial_theta_rejected(self, poly_params, eq_lower):
        theta = TransferMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(ConfigError):
            lv_terms((100.0, 0.0, 0.0), eq_lower, poly_params, 2.0, theta=theta)


class TestSigmaBound:
    def test_finite_positive_bound(self, poly_params, eq_lower):
        report = sigma_bound(eq_lower, poly_params, 2.0)
        assert not report.vacuous
        assert math.isfinite(report.sigma_max)
        assert report.sigma_max > 0
        assert report.binding_state is not None

    def test_above_bound_violates_at_binding_state(self, poly_params, eq_lower):
        report = sigma_bound(eq_lower, poly_params, 2.0)
        sigma = 1.01 * report.sigma_max
        lv = lv_total(report.binding_state, eq_lower, poly_params, 2.0, sigma)
        assert lv > 0
        lv_at = lv_total(report.binding_state, eq_lower, poly_params, 2.0, report.sigma_max)
        assert lv_at == pytest.approx(0.0, abs=1e-9)

    def test_unconditional_violations_reported(self, poly_params, eq_lower):
        report = sigma_bound(eq_lower, poly_params, 2.0)
        assert report.violation_count > 0
        n, z, buf = report.worst_violation
        lv1, lv2 = lv_terms((n, z, buf), eq_lower, poly_params, 2.0)
        assert lv1 <= 0 and lv2 > 0

    def test_equilibrium_only_grid_is_vacuous(self, poly_params, eq_lower):
        # a box containing only the equilibrium point binds nothing
        report = sigma_bound(eq_lower, poly_params, 2.0,
                             axes=([eq_lower.n_eq], [-1.0], [eq_lower.n_buf_eq]))
        assert report.vacuous
        assert "vacuous" in report.note
        assert not np.isfinite(report.sigma_max)

    def test_lyapunov_value_bounded_under_half_sigma_max(self, poly_params, eq_lower):
        # statistical corroboration: at half the admissible noise level, the
        # ensemble mean of V shows no significant upward trend
        from mfdrift.integrator import run_ensemble
        from mfdrift.scenario import (DemandProfile, DemandSegment, InitialState,
                                      ScenarioConfig, SimConfig)
        report = sigma_bound(eq_lower, poly_params, 2.0)
        sigma = 0.5 * report.sigma_max
        params = dataclasses.replace(poly_params, sigma=sigma)
        sc = ScenarioConfig(
            name="lyapunov", regions=(params,),
            demands=(DemandProfile((DemandSegment(kind="constant", level=2.0, t0=0.0),)),),
            initials=(InitialState(n=eq_lower.n_eq, z=0.0),),
            transfer=TransferMatrix.identity(1),
            sim=SimConfig(horizon=1500.0, dt=0.5, n_paths=128, master_seed=404,
                          record_stride=20))
        ens = run_ensemble(sc)
        n = ens.stacked("n")[:, :, 0]
        z = ens.stacked("z")[:, :, 0]
        buf = ens.stacked("n_buf")[:, :, 0]
        v = ((n - eq_lower.n_eq) ** 2 + (z - eq_lower.z_eq) ** 2
             + (buf - eq_lower.n_buf_eq) ** 2).mean(axis=0)
        t = ens.times
        half = len(t) // 2
        fit = sps.linregress(t[half:], v[half:])
        relative_slope = fit.slope * (t[-1] - t[half]) / max(v[half:].mean(), 1e-9)
        assert fit.pvalue > 0.05 or fit.slope <= 0 or relative_slope < 0.1

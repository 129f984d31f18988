import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import band_from_gaps, symmetric_band
from mfdrift import rng
from mfdrift.errors import DomainError
from mfdrift.variation import (DriftMode, anchor_w, drift_diffusion, inverse_transform,
                               step_latent_w, transform_w_to_z)


class TestTransform:
    def test_zero_maps_to_band_midpoint(self):
        gd = symmetric_band(2.0)
        assert transform_w_to_z(0.0, gd) == pytest.approx(0.0, abs=1e-15)

    def test_saturation_approaches_upper_gap(self):
        gd = symmetric_band(2.0)
        assert transform_w_to_z(50.0, gd) == pytest.approx(gd.gamma_plus, abs=1e-12)
        assert transform_w_to_z(50.0, gd) < gd.gamma_plus  # strictly inside

    def test_known_value(self):
        gd = symmetric_band(2.0)
        w = math.atanh(0.5)
        assert w == pytest.approx(0.54931, abs=1e-5)
        assert transform_w_to_z(w, gd) == pytest.approx(0.5, rel=1e-12)

    def test_degenerate_band_returns_zero(self):
        gd = band_from_gaps(1e-9, -1e-9)
        assert transform_w_to_z(3.0, gd) == 0.0

    def test_inverse_known_value(self):
        gd = symmetric_band(2.0)
        assert inverse_transform(0.5, gd) == pytest.approx(math.atanh(0.5), rel=1e-12)
        assert inverse_transform(0.0, gd) == pytest.approx(0.0, abs=1e-15)

    def test_inverse_near_saturation_is_finite(self):
        gd = symmetric_band(2.0)
        w = inverse_transform(gd.gamma_plus - 1e-12, gd)
        assert np.isfinite(w) and w > 10

    def test_inverse_rejects_boundary(self):
        gd = symmetric_band(2.0)
        for bad in (gd.gamma_plus, gd.gamma_minus, 1.5):
            with pytest.raises(DomainError):
                inverse_transform(bad, gd)

    @given(w=st.floats(min_value=-5.0, max_value=5.0),
           gp=st.floats(min_value=0.05, max_value=4.0),
           gm=st.floats(min_value=-4.0, max_value=-0.05))
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, w, gp, gm):
        gd = band_from_gaps(gp, gm)
        assert inverse_transform(transform_w_to_z(w, gd), gd) == pytest.approx(w, abs=1e-8)

    def test_boundary_confinement_bulk(self):
        # exact latent simulation mapped through the transform: a million
        # samples, zero values at or beyond the band edges
        gd = band_from_gaps(0.4, -1.6)
        stream = rng.derive_stream(rng.SeedTree(7), "confinement")
        w = np.cumsum(0.04 * math.sqrt(1.0) * stream.standard_normal(1_000_000))
        z = transform_w_to_z(w, gd)
        assert np.all(z > gd.gamma_minus)
        assert np.all(z < gd.gamma_plus)

    def test_anchor_keeps_flow_on_expectation(self):
        for eta in (0.2, 0.5, 0.8):
            gd = band_from_gaps((1 - eta) * 2.0, -eta * 2.0)
            assert transform_w_to_z(anchor_w(eta), gd) == pytest.approx(0.0, abs=1e-12)


class TestDriftDiffusion:
    def test_derived_values_symmetric_band(self):
        gd = symmetric_band(2.0)
        mu, s = drift_diffusion(0.5, gd, 0.1, DriftMode.ITO)
        assert mu == pytest.approx(-0.00375, rel=1e-12)
        assert s == pytest.approx(0.075, rel=1e-12)
        mu_lit, s_lit = drift_diffusion(0.5, gd, 0.1, DriftMode.LITERAL)
        assert mu_lit == pytest.approx(0.0, abs=1e-15)
        assert s_lit == pytest.approx(s, rel=1e-15)

    def test_midpoint_drift_vanishes(self):
        gd = band_from_gaps(0.9, -1.7)
        mid = 0.5 * gd.delta_plus
        for mode in DriftMode:
            mu, _ = drift_diffusion(mid, gd, 0.3, mode)
            assert mu == pytest.approx(0.0, abs=1e-14)

    def test_boundaries_kill_both_coefficients(self):
        gd = band_from_gaps(1.2, -0.8)
        for z in (gd.gamma_plus, gd.gamma_minus):
            mu, s = drift_diffusion(z, gd, 0.5, DriftMode.ITO)
            assert mu == pytest.approx(0.0, abs=1e-12)
            assert s == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_band_gives_zeros(self):
        gd = band_from_gaps(1e-9, -1e-9)
        assert drift_diffusion(0.0, gd, 0.5, DriftMode.ITO) == (0.0, 0.0)

    @given(st.floats(min_value=-0.49, max_value=0.49))
    @settings(max_examples=100, deadline=None)
    def test_mode_agreement_at_unit_band(self, frac):
        # the printed drift omits a band-width normalization and matches the
        # transform-derived one exactly when the band width is 1
        gd = band_from_gaps(0.3, -0.7)
        assert gd.delta_minus == pytest.approx(1.0)
        z = 0.5 * gd.delta_plus + frac * gd.delta_minus
        mu_i, s_i = drift_diffusion(z, gd, 0.2, DriftMode.ITO)
        mu_l, s_l = drift_diffusion(z, gd, 0.2, DriftMode.LITERAL)
        assert mu_l == pytest.approx(mu_i, rel=1e-12, abs=1e-15)
        assert s_l == s_i

    def test_ito_consistency_with_finite_differences(self):
        # s(f(w)) = sigma f'(w) and mu(f(w)) = (sigma^2/2) f''(w)
        stream = rng.derive_stream(rng.SeedTree(13), "fd")
        sigma = 0.3
        h = 1e-4
        for _ in range(300):
            gp = stream.uniform(0.05, 3.0)
            gm = -stream.uniform(0.05, 3.0)
            gd = band_from_gaps(gp, gm)
            w = stream.uniform(-2.5, 2.5)
            f = lambda x: transform_w_to_z(x, gd)
            d1 = (f(w + h) - f(w - h)) / (2 * h)
            d2 = (f(w + h) - 2 * f(w) + f(w - h)) / (h * h)
            mu, s = drift_diffusion(f(w), gd, sigma, DriftMode.ITO)
            assert s == pytest.approx(sigma * d1, rel=1e-4)
            assert mu == pytest.approx(0.5 * sigma * sigma * d2, rel=1e-3, abs=1e-10)

    def test_array_inputs(self):
        gd = symmetric_band(2.0)
        mu, s = drift_diffusion(np.array([0.0, 0.5]), gd, 0.1)
        assert mu.shape == (2,)
        assert s[1] == pytest.approx(0.075)


class TestLatentStep:
    def test_zero_draw_keeps_value(self):
        assert step_latent_w(1.3, 0.5, 2.0, 0.0) == 1.3

    def test_zero_sigma_keeps_value(self):
        assert step_latent_w(1.3, 0.0, 2.0, 3.7) == 1.3

    def test_arithmetic(self):
        assert step_latent_w(0.0, 0.04, 1.0, 1.0) == pytest.approx(0.04)

    def test_dt_must_be_positive(self):
        with pytest.raises(DomainError):
            step_latent_w(0.0, 0.1, 0.0, 1.0)

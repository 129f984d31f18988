import numpy as np
import pytest

from mfdrift.mfd import BoundarySpec, MfdCurveSpec
from mfdrift.dynamics import RegionParams


@pytest.fixture(scope="session")
def poly_boundary():
    """Cubic mid curve with a 15% multiplicative band (the standard single
    region setup used across the tests)."""
    return BoundarySpec(
        eta=0.5, n_jam=10_000,
        mid=MfdCurveSpec.polynomial(a=3.298e-11, b=-7.37423e-7, c=4.52e-3),
        band_factor=0.15)


@pytest.fixture(scope="session")
def poly_params(poly_boundary):
    return RegionParams(boundary=poly_boundary, sigma=0.04, q_max=12.0)


def symmetric_band(width=2.0):
    """GammaDelta with gamma_plus = -gamma_minus = width/2."""
    from mfdrift.mfd import GammaDelta
    half = width / 2.0
    return GammaDelta(gamma_plus=half, gamma_minus=-half,
                      delta_minus=width, delta_plus=0.0, degenerate=False)


def band_from_gaps(gamma_plus, gamma_minus):
    from mfdrift.mfd import GammaDelta
    dm = gamma_plus - gamma_minus
    return GammaDelta(gamma_plus=gamma_plus, gamma_minus=gamma_minus,
                      delta_minus=dm, delta_plus=gamma_plus + gamma_minus,
                      degenerate=dm < 1e-6)

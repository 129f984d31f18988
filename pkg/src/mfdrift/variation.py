"""The bounded exit-flow variation process.

A latent Wiener value ``w`` (diffusing as ``dw = sigma dB``) is squashed
through a hyperbolic tangent into the band between the boundary curves:

    z = gamma_minus + (tanh(w) + 1)/2 * delta_minus

so the realized exit flow ``g_mi(n) + z`` can never leave
``[g_lw(n), g_up(n)]``.  This module provides the transform, its inverse,
and the Ito drift/diffusion coefficients of ``z`` itself.

Two drift conventions exist.  ``DriftMode.ITO`` is the coefficient obtained
by differentiating the transform (correct for any band width).
``DriftMode.LITERAL`` reproduces the closed-form drift as it circulates in
the source literature, which omits a ``delta_minus**2`` normalization; the
two coincide exactly when the band width is 1.  LITERAL is kept because the
published calibration equations are built on it.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import DegenerateBandError, DomainError
from .mfd import GammaDelta


class DriftMode(enum.Enum):
    ITO = "ito"
    LITERAL = "literal"

    @classmethod
    def parse(cls, value) -> "DriftMode":
        if isinstance(value, cls):
            return value
        aliases = {"ito": cls.ITO, "ito_correct": cls.ITO,
                   "literal": cls.LITERAL, "paper": cls.LITERAL,
                   "paper_literal": cls.LITERAL}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown drift mode {value!r}") from None


# tanh saturates to exactly 1.0 in float64 for |w| >~ 19; clip one ulp
# inside so the mapped variation stays strictly within the open band.
_TANH_LIMIT = np.nextafter(1.0, 0.0)


def anchor_w(eta: float) -> float:
    """Latent value that puts the variation at z = 0 (flow on g_mi).

    With the expectation curve at fraction ``eta`` of the band, z = 0
    corresponds to tanh(w) = 2*eta - 1 at every accumulation.
    """
    return float(np.arctanh(2.0 * eta - 1.0))


def transform_w_to_z(w, gd: GammaDelta):
    """Map a latent Wiener value into the exit-flow band.

    Monotone increasing in ``w`` with range (gamma_minus, gamma_plus);
    degenerate bands yield 0.
    """
    u = np.clip(np.tanh(w), -_TANH_LIMIT, _TANH_LIMIT)
    dm = np.where(gd.degenerate, 1.0, gd.delta_minus)
    # anchor at the nearer band edge: subtracting the small remaining gap is
    # exact near saturation, so the result stays strictly inside the band
    z_from_lower = gd.gamma_minus + 0.5 * (1.0 + u) * dm
    z_from_upper = gd.gamma_plus - 0.5 * (1.0 - u) * dm
    z = np.where(u > 0, z_from_upper, z_from_lower)
    z = np.where(gd.degenerate, 0.0, z)
    if np.ndim(z) == 0:
        return float(z)
    return z


def inverse_transform(z, gd: GammaDelta):
    """Latent value whose transform is ``z``; requires z strictly inside the band."""
    if np.any(np.asarray(gd.degenerate)):
        raise DegenerateBandError("inverse transform undefined on a degenerate band")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr <= gd.gamma_minus) or np.any(z_arr >= gd.gamma_plus):
        raise DomainError("variation must lie strictly inside (gamma_minus, gamma_plus)")
    u = (2.0 * z_arr - gd.delta_plus) / gd.delta_minus
    w = np.arctanh(np.clip(u, -_TANH_LIMIT, _TANH_LIMIT))
    if np.ndim(z) == 0 and np.ndim(w) == 0:
        return float(w)
    return w


def drift_diffusion(z, gd: GammaDelta, sigma: float, mode: DriftMode = DriftMode.ITO):
    """Ito drift and diffusion coefficients of the variation at level ``z``.

    Both modes share the diffusion
    ``s = sigma * (dm^2 - (dp - 2z)^2) / (2 dm)``; the modes differ only in
    the drift (see module docstring).  Degenerate bands return (0, 0).
    """
    mode = DriftMode.parse(mode)
    z_arr = np.asarray(z, dtype=float)
    dm = np.where(gd.degenerate, 1.0, gd.delta_minus)
    v = gd.delta_plus - 2.0 * z_arr
    gap = dm * dm - v * v
    s = sigma * gap / (2.0 * dm)
    if mode is DriftMode.ITO:
        mu = -0.5 * sigma * sigma * (2.0 * z_arr - gd.delta_plus) * gap / (dm * dm)
    else:
        mu = -0.5 * sigma * sigma * (-gd.delta_plus + 2.0 * z_arr + v ** 3)
    mu = np.where(gd.degenerate, 0.0, mu)
    s = np.where(gd.degenerate, 0.0, s)
    if np.ndim(z) == 0 and np.ndim(mu) == 0:
        return float(mu), float(s)
    return mu, s


def step_latent_w(w, sigma: float, dt: float, xi):
    """One exact Euler step of the latent Wiener value: w + sigma*sqrt(dt)*xi."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    out = w + sigma * np.sqrt(dt) * np.asarray(xi, dtype=float)
    if np.ndim(w) == 0 and np.ndim(out) == 0:
        return float(out)
    return out

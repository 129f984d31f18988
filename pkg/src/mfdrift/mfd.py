"""MFD curve families, boundary pairs, and the derived band quantities.

A region's exit behaviour is described by three characteristic curves:
an upper boundary ``g_up``, a lower boundary ``g_lw``, and an expectation
curve ``g_mi`` placed between them by the skew parameter ``eta``.  The
band gaps above/below the expectation (``gamma_plus`` >= 0 and
``gamma_minus`` <= 0) and their difference/sum (``delta_minus``,
``delta_plus``) drive everything downstream: the bounded noise transform,
the SDE coefficients, and the Fokker-Planck operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize

from .errors import ConfigError, DomainError, NoInteriorMaximumError

#: Band widths below this floor are treated as degenerate (no room for noise).
EPS_FLOW = 1e-6

#: Grid resolution used for load-time curve validation.
_VALIDATION_POINTS = 1000


@dataclass(frozen=True)
class MfdCurveSpec:
    """One exit-flow curve: cubic polynomial, exponential, or tabulated.

    Units: accumulation in vehicles, flow in vehicles/second (or whatever
    flow unit the fitted coefficients imply; the package is unit-agnostic).
    """

    family: str  # "polynomial" | "exponential" | "tabulated"
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    p1: float = 0.0
    p2: float = 1.0
    n_crt: float = 1.0
    points: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.family not in ("polynomial", "exponential", "tabulated"):
            raise ConfigError(f"unknown curve family {self.family!r}")
        if self.family == "exponential":
            if self.p2 <= 0:
                raise ConfigError("exponential curve requires p2 > 0")
            if self.n_crt <= 0:
                raise ConfigError("exponential curve requires n_crt > 0")
        if self.family == "tabulated":
            pts = self.points
            if not pts or len(pts) < 2:
                raise ConfigError("tabulated curve needs at least 2 points")
            ns = [p[0] for p in pts]
            if any(n2 <= n1 for n1, n2 in zip(ns, ns[1:])):
                raise ConfigError("tabulated points must be strictly increasing in n")
            if any(f < 0 for _, f in pts):
                raise ConfigError("tabulated flows must be non-negative")

    @staticmethod
    def polynomial(a: float, b: float, c: float) -> "MfdCurveSpec":
        return MfdCurveSpec(family="polynomial", a=a, b=b, c=c)

    @staticmethod
    def exponential(p1: float, p2: float, n_crt: float) -> "MfdCurveSpec":
        return MfdCurveSpec(family="exponential", p1=p1, p2=p2, n_crt=n_crt)

    @staticmethod
    def tabulated(points: Sequence[tuple[float, float]]) -> "MfdCurveSpec":
        return MfdCurveSpec(family="tabulated", points=tuple((float(n), float(f)) for n, f in points))


def eval_curve(spec: MfdCurveSpec, n):
    """Evaluate the curve at accumulation ``n`` (scalar or array).

    Tabulated curves interpolate linearly and clamp to end values outside
    their range.  Negative accumulations are a domain error.
    """
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise DomainError("accumulation must be non-negative")
    if spec.family == "polynomial":
        out = ((spec.a * n_arr + spec.b) * n_arr + spec.c) * n_arr
    elif spec.family == "exponential":
        scaled = n_arr ** spec.p2
        out = spec.p1 * scaled * np.exp(-scaled / spec.n_crt ** spec.p2)
    else:
        xs = np.array([p[0] for p in spec.points])
        ys = np.array([p[1] for p in spec.points])
        out = np.interp(n_arr, xs, ys)
    return float(out) if np.isscalar(n) or n_arr.ndim == 0 else out


def critical_accumulation(spec: MfdCurveSpec, n_jam: Optional[float] = None) -> float:
    """Accumulation at the curve's interior maximum (the critical point).

    Polynomial: smaller root of the derivative quadratic (checked to be a
    maximum).  Exponential: the maximum sits at ``n_crt`` for every shape
    exponent.  Tabulated: golden-section search over the point range.
    """
    hi = n_jam if n_jam is not None else None
    if spec.family == "polynomial":
        # derivative 3a n^2 + 2b n + c = 0
        roots = np.roots([3.0 * spec.a, 2.0 * spec.b, spec.c])
        roots = sorted(r.real for r in roots if abs(r.imag) < 1e-12 and r.real > 0)
        for r in roots:
            second = 6.0 * spec.a * r + 2.0 * spec.b
            if second < 0 and (hi is None or r < hi):
                return float(r)
        raise NoInteriorMaximumError("polynomial curve has no interior maximum on the domain")
    if spec.family == "exponential":
        if hi is not None and spec.n_crt >= hi:
            raise NoInteriorMaximumError("exponential maximum lies at or beyond the domain edge")
        return float(spec.n_crt)
    lo = spec.points[0][0]
    hi = min(spec.points[-1][0], hi) if hi is not None else spec.points[-1][0]
    res = optimize.minimize_scalar(
        lambda x: -eval_curve(spec, x), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-10 * max(1.0, hi)})
    x = float(res.x)
    f_x = eval_curve(spec, x)
    span = hi - lo
    if x - lo < 1e-6 * span or hi - x < 1e-6 * span:
        raise NoInteriorMaximumError("tabulated curve is monotone on the domain")
    if f_x <= max(eval_curve(spec, lo), eval_curve(spec, hi)):
        raise NoInteriorMaximumError("tabulated curve has no interior maximum")
    return x


@dataclass(frozen=True)
class BoundarySpec:
    """Upper/lower boundary pair plus the eta-positioned expectation curve.

    Either both ``upper`` and ``lower`` curves are given, or a single
    ``mid`` curve with a multiplicative ``band_factor`` beta builds
    ``g_up = (1+beta) g`` and ``g_lw = (1-beta) g``.
    """

    eta: float
    n_jam: float
    upper: Optional[MfdCurveSpec] = None
    lower: Optional[MfdCurveSpec] = None
    mid: Optional[MfdCurveSpec] = None
    band_factor: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("eta must lie strictly inside (0, 1)")
        if self.n_jam <= 0:
            raise ConfigError("n_jam must be positive")
        two_curve = self.upper is not None and self.lower is not None
        banded = self.mid is not None and self.band_factor is not None
        if two_curve == banded:
            raise ConfigError("give either upper+lower curves or mid+band_factor")
        if banded and not 0.0 < self.band_factor < 1.0:
            raise ConfigError("band_factor must lie in (0, 1)")
        self._validate_on_grid()

    def _validate_on_grid(self):
        ns = np.linspace(0.0, self.n_jam, _VALIDATION_POINTS)
        up, lw, mi = self.curves(ns)
        if np.any(lw < -1e-12):
            raise ConfigError("lower boundary is negative inside [0, n_jam]")
        if np.any(up - lw < -1e-12):
            raise ConfigError("upper boundary dips below the lower boundary inside [0, n_jam]")
        if np.any((mi - lw < -1e-9) | (up - mi < -1e-9)):
            raise ConfigError("expectation curve leaves the boundary band")

    def curves(self, n):
        """(g_up, g_lw, g_mi) at ``n`` without the domain check (internal)."""
        if self.band_factor is not None:
            g = eval_curve(self.mid, n)
            up = (1.0 + self.band_factor) * np.asarray(g, dtype=float)
            lw = (1.0 - self.band_factor) * np.asarray(g, dtype=float)
        else:
            up = np.asarray(eval_curve(self.upper, n), dtype=float)
            lw = np.asarray(eval_curve(self.lower, n), dtype=float)
        mi = lw + self.eta * (up - lw)
        return up, lw, mi


@dataclass(frozen=True)
class GammaDelta:
    """Band gaps around the expectation curve at one accumulation.

    ``gamma_plus = g_up - g_mi >= 0``, ``gamma_minus = g_lw - g_mi <= 0``,
    ``delta_minus = gamma_plus - gamma_minus`` (the full band width) and
    ``delta_plus = gamma_plus + gamma_minus``.  Fields may be scalars or
    aligned arrays.  ``degenerate`` marks band widths below the configured
    floor; consumers must pin the exit-flow variation to zero there.
    """

    gamma_plus: Union[float, np.ndarray]
    gamma_minus: Union[float, np.ndarray]
    delta_minus: Union[float, np.ndarray]
    delta_plus: Union[float, np.ndarray]
    degenerate: Union[bool, np.ndarray]


def characteristic_curves(spec: BoundarySpec, n):
    """(g_up, g_lw, g_mi) at accumulation ``n`` in [0, n_jam]."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0) or np.any(n_arr > spec.n_jam):
        raise DomainError("accumulation outside [0, n_jam]")
    up, lw, mi = spec.curves(n_arr)
    if np.isscalar(n) or n_arr.ndim == 0:
        return float(up), float(lw), float(mi)
    return up, lw, mi


def gamma_delta(spec: BoundarySpec, n, eps_flow: float = EPS_FLOW) -> GammaDelta:
    """Band gaps at ``n``; flags the result degenerate when the band width
    falls below ``eps_flow``."""
    up, lw, mi = characteristic_curves(spec, n)
    gp = np.asarray(up, dtype=float) - mi
    gm = np.asarray(lw, dtype=float) - mi
    dm = gp - gm
    dp = gp + gm
    degenerate = dm < eps_flow
    if np.isscalar(n) or np.asarray(n).ndim == 0:
        return GammaDelta(float(gp), float(gm), float(dm), float(dp), bool(degenerate))
    return GammaDelta(gp, gm, dm, dp, degenerate)

"""Ensemble post-processing: conditional distributions, marginals,
hysteresis curves, gridlock fractions, skew and correlation diagnostics.

All operations are pure functions of an :class:`EnsembleResult`; rerunning
them on the same ensemble is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError, EmptySampleError, UndefinedStatisticError
from .integrator import EnsembleResult


@dataclass(frozen=True)
class Histogram:
    """Normalized histogram: piecewise-constant density over the bin edges."""

    edges: np.ndarray
    densities: np.ndarray
    sample_count: int

    def integral(self) -> float:
        return float(np.sum(self.densities * np.diff(self.edges)))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True)
class HysteresisCurve:
    """Mean loading-minus-unloading exit flow per accumulation level."""

    levels: np.ndarray
    mean_decrease: np.ndarray  # nan where no path shows both crossings
    stderr: np.ndarray
    counts: np.ndarray


def _histogram(samples: np.ndarray, bins: int) -> Histogram:
    samples = np.asarray(samples, dtype=float)
    lo, hi = float(samples.min()), float(samples.max())
    if hi <= lo:
        # point mass: one occupied bin around the constant value
        width = max(abs(lo), 1.0) * 1e-9
        lo, hi = lo - width, hi + width
    dens, edges = np.histogram(samples, bins=bins, range=(lo, hi), density=True)
    return Histogram(edges=edges, densities=dens, sample_count=samples.size)


def exit_flow_distribution_at(ensemble: EnsembleResult, n_star: float, window: float,
                              region: int = 0, bins: int = 40) -> Histogram:
    """Distribution of realized exit flow over samples with |n - n_star| <= window."""
    if window <= 0:
        raise DomainError("window must be positive")
    n = ensemble.stacked("n")[:, :, region]
    g = ensemble.stacked("g")[:, :, region]
    mask = np.abs(n - n_star) <= window
    if not mask.any():
        raise EmptySampleError(f"no samples within {window:g} of n={n_star:g}")
    return _histogram(g[mask], bins)


def marginal_at_time(ensemble: EnsembleResult, t: float, variable: str = "n",
                     region: int = 0, bins: int = 40) -> Histogram:
    """Across-path histogram of one variable at the recorded time nearest ``t``."""
    times = ensemble.times
    if t < times[0] or t > times[-1]:
        raise DomainError(f"t={t:g} outside the recorded horizon [{times[0]:g}, {times[-1]:g}]")
    if variable not in ("n", "z", "g"):
        raise DomainError(f"unknown variable {variable!r}")
    idx = int(np.argmin(np.abs(times - t)))
    values = ensemble.stacked(variable)[:, idx, region]
    return _histogram(values, bins)


def _first_crossings(n_path: np.ndarray, g_path: np.ndarray, level: float):
    """G at the first upcrossing of ``level`` and at the first subsequent
    downcrossing, linearly interpolated; None when a crossing is missing."""
    above = n_path >= level
    if above[0]:
        up_idx = 0  # starts at or above the level: treat the start as the upcrossing
        g_up = g_path[0]
    else:
        crossings = np.nonzero(~above[:-1] & above[1:])[0]
        if crossings.size == 0:
            return None
        k = crossings[0]
        frac = (level - n_path[k]) / (n_path[k + 1] - n_path[k])
        g_up = g_path[k] + frac * (g_path[k + 1] - g_path[k])
        up_idx = k + 1
    below = ~above
    down = np.nonzero(above[up_idx:-1] & below[up_idx + 1:])[0]
    if down.size == 0:
        return None
    k = up_idx + down[0]
    frac = (n_path[k] - level) / (n_path[k] - n_path[k + 1])
    g_down = g_path[k] + frac * (g_path[k + 1] - g_path[k])
    return g_up, g_down


def hysteresis_curve(ensemble: EnsembleResult, n_grid: Sequence[float],
                     band_limits: Optional[tuple] = None, region: int = 0) -> HysteresisCurve:
    """Per level: mean of (G at first upcrossing - G at first subsequent
    downcrossing) across the paths exhibiting both crossings."""
    levels = np.asarray(n_grid, dtype=float)
    if band_limits is not None:
        lo, hi = band_limits
        levels = levels[(levels >= lo) & (levels <= hi)]
    n = ensemble.stacked("n")[:, :, region]
    g = ensemble.stacked("g")[:, :, region]
    means = np.full(levels.shape, np.nan)
    errs = np.full(levels.shape, np.nan)
    counts = np.zeros(levels.shape, dtype=int)
    for j, level in enumerate(levels):
        drops = []
        for p in range(n.shape[0]):
            res = _first_crossings(n[p], g[p], level)
            if res is not None:
                drops.append(res[0] - res[1])
        counts[j] = len(drops)
        if drops:
            arr = np.asarray(drops)
            means[j] = arr.mean()
            errs[j] = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
    return HysteresisCurve(levels=levels, mean_decrease=means, stderr=errs, counts=counts)


def gridlock_probability(ensemble: EnsembleResult, n_threshold: float, t_eval: float,
                         region: int = 0) -> float:
    """Fraction of paths with n(t_eval) at or above the threshold."""
    times = ensemble.times
    if t_eval < times[0] or t_eval > times[-1]:
        raise DomainError(f"t_eval={t_eval:g} outside the recorded horizon")
    idx = int(np.argmin(np.abs(times - t_eval)))
    n = ensemble.stacked("n")[:, idx, region]
    return float(np.mean(n >= n_threshold))


def sample_skewness(samples) -> float:
    """Adjusted Fisher-Pearson sample skewness."""
    arr = np.asarray(samples, dtype=float)
    if arr.size < 3:
        raise UndefinedStatisticError("skewness needs at least 3 samples")
    if np.ptp(arr) == 0 or np.var(arr) == 0:
        raise UndefinedStatisticError("skewness undefined for constant samples")
    return float(stats.skew(arr, bias=False))


def pearson_correlation(ensemble: EnsembleResult, variable: str, region_pair: tuple,
                        t_range: Optional[tuple] = None) -> float:
    """Pearson correlation of one variable between two regions, pooled over
    paths and matched recorded times."""
    a, b = region_pair
    x = ensemble.stacked(variable)[:, :, a]
    y = ensemble.stacked(variable)[:, :, b]
    if t_range is not None:
        times = ensemble.times
        mask = (times >= t_range[0]) & (times <= t_range[1])
        x, y = x[:, mask], y[:, mask]
    return float(np.corrcoef(x.ravel(), y.ravel())[0, 1])


def joint_heatmap(ensemble: EnsembleResult, variable: str, region_pair: tuple,
                  t_range: Optional[tuple] = None, bins: int = 40):
    """2-D binned counts of one variable across two regions.

    Returns (counts, x_edges, y_edges); marginal sums of the counts match
    1-D histograms with the same edges bin-for-bin.
    """
    if ensemble.n_regions < 2:
        raise DomainError("joint heatmap needs a two-region ensemble")
    if variable not in ("n", "z", "g"):
        raise DomainError(f"unknown variable {variable!r}")
    a, b = region_pair
    x = ensemble.stacked(variable)[:, :, a]
    y = ensemble.stacked(variable)[:, :, b]
    if t_range is not None:
        times = ensemble.times
        mask = (times >= t_range[0]) & (times <= t_range[1])
        x, y = x[:, mask], y[:, mask]
    counts, xe, ye = np.histogram2d(x.ravel(), y.ravel(), bins=bins)
    return counts, xe, ye

"""Pointwise posterior summaries: return levels, chi, angular densities and conditional tails.

Every product is a function evaluated once per retained draw, then reduced to
its posterior mean and 0.05 / 0.95 quantiles at each grid point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .angular import conditional_tail, pair_angular_density
from .margins import ExceedanceRates, MarginalParams, frechet_arr, return_level

__all__ = [
    "DEFAULT_RETURN_PERIODS",
    "Band",
    "PosteriorProducts",
    "summarize_draws",
    "return_level_draws",
    "angular_grid",
    "posterior_products",
]

DEFAULT_RETURN_PERIODS = (2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0)
GRID_POINTS = 512


@dataclass(frozen=True)
class Band:
    """Posterior mean with 0.05 and 0.95 quantiles, pointwise over a grid."""

    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray


def summarize_draws(values) -> Band:
    """Reduce ``(n_draws, ...)`` values over the first axis."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] == 0:
        raise ValueError("no retained draws")
    q05, q95 = np.quantile(v, [0.05, 0.95], axis=0)
    return Band(v.mean(axis=0), q05, q95)


def _margins(sample, r: int) -> MarginalParams:
    return MarginalParams(sample.log_scales[r], sample.shapes[r], sample.regional)


def _draw_indices(n: int, max_draws: int | None) -> np.ndarray:
    """Evenly spaced subset of draws, deterministic."""
    if max_draws is None or n <= max_draws:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_draws).round().astype(int))


def return_level_draws(sample, j: int, periods, rates: ExceedanceRates, thresholds) -> np.ndarray:
    """Return levels of site ``j`` for each draw, shape ``(n_draws, len(periods))``."""
    periods = np.asarray(periods, dtype=float)
    return np.array(
        [return_level(periods, j, _margins(sample, r), rates, thresholds) for r in range(sample.n_draws)]
    ).reshape(sample.n_draws, periods.size)


def angular_grid(n: int = GRID_POINTS) -> np.ndarray:
    """Cell midpoints of a uniform grid on (0, 1); the endpoints may carry infinite density."""
    return (np.arange(n) + 0.5) / n


@dataclass(frozen=True, eq=False)
class PosteriorProducts:
    site_names: tuple[str, ...]
    periods: np.ndarray
    return_levels: dict[int, Band]
    chi: dict[tuple[int, int], Band]
    angular_w: np.ndarray
    angular: dict[tuple[int, int], Band]
    tail_levels: dict[int, np.ndarray]
    tails: dict[tuple[int, int], Band]
    n_draws: int

    def return_level_rows(self):
        for j, band in self.return_levels.items():
            for t, m, lo, hi in zip(self.periods, band.mean, band.q05, band.q95):
                yield self.site_names[j], float(t), float(m), float(lo), float(hi)

    def chi_rows(self):
        for (i, j), band in self.chi.items():
            yield f"{self.site_names[i]}-{self.site_names[j]}", float(band.mean), float(band.q05), float(band.q95)


def posterior_products(
    sample,
    rates: ExceedanceRates,
    thresholds,
    periods=DEFAULT_RETURN_PERIODS,
    grid_points: int = GRID_POINTS,
    tail_points: int = 50,
    tail_period: float = 1000.0,
    max_draws: int | None = 2000,
) -> PosteriorProducts:
    """All posterior summaries of one (possibly pooled) sample.

    Return periods shorter than the threshold exceedance period are dropped.
    Conditional tails ``P(Y_i > y | Y_j > v_j)`` are evaluated on a data-scale
    grid for site ``i`` running from ``v_i`` to the posterior-mean
    ``tail_period``-year level. Angular grids and tails use at most
    ``max_draws`` evenly spaced draws; return levels and chi use them all.
    """
    if sample.n_draws == 0:
        raise ValueError("no retained draws")
    d = sample.log_scales.shape[1]
    v = np.asarray(thresholds, dtype=float)
    zeta = np.asarray(rates.zetas, dtype=float)
    shortest = 1.0 / (zeta.min() * 365.25)
    periods = np.array([t for t in periods if t >= shortest * (1 + 1e-12)], dtype=float)

    levels = {j: summarize_draws(return_level_draws(sample, j, periods, rates, v)) for j in range(d)}
    chi_draws = sample.chi()
    pairs = list(itertools.combinations(range(d), 2))
    chi = {p: summarize_draws(chi_draws[p]) for p in pairs}

    idx = _draw_indices(sample.n_draws, max_draws)
    w = angular_grid(grid_points)
    angular = {
        (i, j): summarize_draws([pair_angular_density(w, sample.mixtures[r], i, j) for r in idx]) for i, j in pairs
    }

    top = {j: float(np.mean(return_level_draws(sample, j, [tail_period], rates, v))) for j in range(d)}
    tail_levels = {j: np.linspace(v[j], max(top[j], v[j] * (1 + 1e-9)), tail_points) for j in range(d)}
    u = rates.frechet_thresholds
    tails = {}
    for i, j in itertools.permutations(range(d), 2):
        rows = []
        for r in idx:
            m = _margins(sample, r)
            with np.errstate(invalid="ignore", divide="ignore"):
                x = frechet_arr(tail_levels[i], v[i], m.scales[i], m.shapes[i], zeta[i])
            # beyond the upper endpoint of a bounded margin the tail is empty
            x = np.where(np.isfinite(x), x, np.inf)
            rows.append(conditional_tail(i, j, x, float(u[j]), sample.mixtures[r]))
        tails[(i, j)] = summarize_draws(rows)
    return PosteriorProducts(
        tuple(sample.site_names), periods, levels, chi, w, angular, tail_levels, tails, int(sample.n_draws)
    )

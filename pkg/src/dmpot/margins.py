"""Generalized Pareto margins above threshold and unit-Frechet standardization.

Above ``v_j`` the cluster-maximum cdf is ``F(y) = 1 - zeta * s(y)`` with
``s(y) = (1 + xi (y - v) / sigma) ** (-1 / xi)``. The Frechet transform is
``x = -1 / log F(y)`` so that ``P(X < x) = exp(-1/x)``.

The ``*_arr`` functions broadcast over arrays of parameters and are what the
likelihood uses; the per-site wrappers follow the ``(y, j, margins, rates,
thresholds)`` calling convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data_model import CensorKind, SeriesPanel, ThresholdConfig
from .decluster import univariate_clusters

__all__ = [
    "SHAPE_EPS",
    "MarginalParams",
    "ExceedanceRates",
    "MarginError",
    "estimate_zeta",
    "gpd_cdf",
    "gpd_survival",
    "frechet_transform",
    "frechet_inverse",
    "frechet_jacobian",
    "return_level",
    "empirical_return_period",
    "log_survival_ratio",
    "frechet_arr",
    "frechet_inverse_arr",
    "log_jacobian_arr",
    "moment_start",
]

# below this |xi| the exponential limit is used
SHAPE_EPS = 1e-6


class MarginError(ValueError):
    pass


@dataclass(frozen=True)
class MarginalParams:
    log_scales: np.ndarray
    shapes: np.ndarray
    regional: bool = False

    def __post_init__(self):
        ls = np.array(self.log_scales, dtype=float).ravel()
        sh = np.array(self.shapes, dtype=float).ravel()
        if ls.shape != sh.shape:
            raise ValueError("log_scales and shapes must have the same length")
        if self.regional and sh.size and np.ptp(sh) != 0:
            raise ValueError("regional margins need identical shapes")
        object.__setattr__(self, "log_scales", ls)
        object.__setattr__(self, "shapes", sh)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def n_sites(self) -> int:
        return self.log_scales.size

    def as_vector(self) -> np.ndarray:
        """``(log sigma_1..d, xi_1..d)``."""
        return np.concatenate([self.log_scales, self.shapes])


@dataclass(frozen=True)
class ExceedanceRates:
    zetas: np.ndarray

    def __post_init__(self):
        z = np.array(self.zetas, dtype=float).ravel()
        if np.any(~((z > 0) & (z < 1))):
            raise MarginError(f"exceedance rates must lie in (0, 1), got {z}")
        object.__setattr__(self, "zetas", z)

    @property
    def frechet_thresholds(self) -> np.ndarray:
        """``u_j = -1 / log(1 - zeta_j)``."""
        return -1.0 / np.log1p(-self.zetas)


def estimate_zeta(panel: SeriesPanel, config: ThresholdConfig) -> ExceedanceRates:
    """Share of intra-cluster days (univariate declustering) among non-missing days."""
    z = np.empty(panel.n_sites)
    for j in range(panel.n_sites):
        observed = int(np.count_nonzero(panel.kinds[:, j] != CensorKind.MISSING))
        if observed == 0:
            raise MarginError(f"site {panel.site_names[j]} has no non-missing days")
        days = sum(c.length for c in univariate_clusters(panel, config, j))
        if days == 0:
            raise MarginError(
                f"threshold too high at site {panel.site_names[j]}: no excess of {config.thresholds[j]}"
            )
        z[j] = days / observed
    return ExceedanceRates(z)


def log_survival_ratio(y, v, sigma, xi):
    """``log s(y)``; ``-inf`` beyond the upper endpoint when ``xi < 0``."""
    y, v, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, v, sigma, xi)))
    z = (y - v) / sigma
    small = np.abs(xi) < SHAPE_EPS
    xi_safe = np.where(small, 1.0, xi)
    arg = xi_safe * z
    with np.errstate(divide="ignore", invalid="ignore"):
        gen = np.where(arg > -1.0, -np.log1p(np.maximum(arg, -1.0)) / xi_safe, -np.inf)
    return np.where(small, -z, gen)


def frechet_arr(y, v, sigma, xi, zeta):
    """Broadcast Frechet transform; ``y >= v`` is assumed."""
    log_s = log_survival_ratio(y, v, sigma, xi)
    with np.errstate(divide="ignore"):
        return -1.0 / np.log1p(-zeta * np.exp(log_s))


def frechet_inverse_arr(x, v, sigma, xi, zeta):
    """Inverse of :func:`frechet_arr` for ``x >= u``; NaN below ``u``."""
    x = np.asarray(x, dtype=float)
    s = -np.expm1(-1.0 / x) / zeta
    with np.errstate(divide="ignore", invalid="ignore"):
        log_s = np.log(s)
        small = np.abs(xi) < SHAPE_EPS
        xi_safe = np.where(small, 1.0, xi)
        z = np.where(small, -log_s, np.expm1(-xi_safe * log_s) / xi_safe)
    z = np.where(s <= 1.0, np.maximum(z, 0.0), np.nan)
    return v + sigma * z


def log_jacobian_arr(y, v, sigma, xi, zeta):
    """``log dx/dy`` of the Frechet transform at ``y > v``."""
    log_s = log_survival_ratio(y, v, sigma, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = -1.0 / np.log1p(-zeta * np.exp(log_s))
        return np.log(zeta) - np.log(sigma) + (1.0 + xi) * log_s + 1.0 / x + 2.0 * np.log(x)


def _site(j, margins: MarginalParams, rates: ExceedanceRates, thresholds):
    v = float(np.asarray(thresholds, dtype=float)[j])
    return v, float(margins.scales[j]), float(margins.shapes[j]), float(rates.zetas[j])


def _check_above(y, v):
    if np.any(np.asarray(y) < v):
        raise MarginError(f"value below threshold {v}: the margin is only modelled above it")


def gpd_survival(y, j, margins, rates, thresholds):
    v, sigma, xi, zeta = _site(j, margins, rates, thresholds)
    _check_above(y, v)
    return zeta * np.exp(log_survival_ratio(y, v, sigma, xi))


def gpd_cdf(y, j, margins, rates, thresholds):
    """``F_j(y)`` for ``y >= v_j``; 1 past the upper endpoint when ``xi < 0``."""
    return 1.0 - gpd_survival(y, j, margins, rates, thresholds)


def frechet_transform(y, j, margins, rates, thresholds):
    v, sigma, xi, zeta = _site(j, margins, rates, thresholds)
    _check_above(y, v)
    x = frechet_arr(y, v, sigma, xi, zeta)
    if np.any(np.isinf(x)):
        warnings.warn("value at or beyond the GPD upper endpoint: Frechet value is +inf", RuntimeWarning)
    return x[()] if np.ndim(x) == 0 else x


def frechet_inverse(x, j, margins, rates, thresholds):
    v, sigma, xi, zeta = _site(j, margins, rates, thresholds)
    u = rates.frechet_thresholds[j]
    if np.any(np.asarray(x) < u):
        raise MarginError(f"Frechet value below u_{j} = {u}")
    y = frechet_inverse_arr(x, v, sigma, xi, zeta)
    return y[()] if np.ndim(y) == 0 else y


def frechet_jacobian(y, j, margins, rates, thresholds):
    """``dx/dy`` at ``y > v_j``."""
    v, sigma, xi, zeta = _site(j, margins, rates, thresholds)
    if np.any(np.asarray(y) <= v):
        raise MarginError("Jacobian needs y strictly above the threshold")
    out = np.exp(log_jacobian_arr(y, v, sigma, xi, zeta))
    return out[()] if np.ndim(out) == 0 else out


def return_level(T_years, j, margins, rates, thresholds, days_per_year=365.25):
    """Level whose daily exceedance probability is ``1 / (T_years * days_per_year)``."""
    v, sigma, xi, zeta = _site(j, margins, rates, thresholds)
    T = np.asarray(T_years, dtype=float)
    if np.any(T <= 0):
        raise MarginError("return period must be positive")
    p = 1.0 / (T * days_per_year)
    if np.any(p > zeta * (1 + 1e-12)):
        raise MarginError(
            f"return period shorter than the threshold exceedance period {1 / (zeta * days_per_year):.4g} years"
        )
    log_s = np.log(np.minimum(p / zeta, 1.0))
    if abs(xi) < SHAPE_EPS:
        z = -log_s
    else:
        z = np.expm1(-xi * log_s) / xi
    q = v + sigma * z
    return q[()] if np.ndim(q) == 0 else q


def empirical_return_period(panel: SeriesPanel, j: int, days_per_year=365.25, span_years=None):
    """Weibull plotting positions of the exact values at site ``j``.

    For ``m`` exact values over a record of ``span_years`` (default: the panel
    date range), the value of rank ``i`` (1 = largest) gets the period
    ``span_years * (m + 1) / (m * i)``. Ties share the best rank.
    """
    col = panel.values[:, j][panel.kinds[:, j] == CensorKind.EXACT]
    if col.size == 0:
        return []
    if span_years is None:
        span_years = panel.n_days / days_per_year
    m = col.size
    order = np.argsort(-col, kind="stable")
    vals = col[order]
    ranks = rankdata(-vals, method="min")
    periods = span_years * (m + 1) / (m * ranks)
    return [(float(a), float(b)) for a, b in zip(vals, periods)]


def moment_start(excesses) -> tuple[float, float]:
    """Method-of-moments GPD ``(log sigma, xi)`` from threshold excesses.

    Falls back to the exponential fit when the moment shape would exclude an
    observed excess from the support.
    """
    z = np.asarray(excesses, dtype=float)
    m = z.mean()
    if z.size < 2 or not np.var(z, ddof=1) > 0:
        return float(np.log(max(m, 1e-12))), 0.0
    r = m * m / np.var(z, ddof=1)
    xi = 0.5 * (1.0 - r)
    sigma = 0.5 * m * (r + 1.0)
    if xi < 0 and np.any(1.0 + xi * z / sigma <= 0.01):
        return float(np.log(m)), 0.0
    return float(np.log(sigma)), float(xi)

"""Censored Poisson point-process log-likelihood.

Cluster maxima enter as points of the exponent measure on the unit-Frechet
scale. Below-threshold days and undetermined blocks enter through void
probabilities ``-(days / tau) * lambda(region)``. Censored or missing
coordinates of cluster maxima are carried as imputed Frechet values
(:class:`AugmentedState`) and refreshed by the sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import betainc, betaincinv, betaln, gammainc, gammaincc, gammaln, logsumexp

from .angular import DMParams, exponent_measure_many, exponent_measure_region, log_exponent_density
from .data_model import CensorKind
from .decluster import ClusterMaximum, DeclusterSummary, UndeterminedBlock
from .margins import (
    SHAPE_EPS,
    ExceedanceRates,
    MarginalParams,
    frechet_arr,
    frechet_inverse_arr,
    log_jacobian_arr,
)

__all__ = [
    "LikelihoodError",
    "LikelihoodData",
    "ExtremeRegion",
    "AugmentedState",
    "LikelihoodTerms",
    "cluster_log_term",
    "cluster_log_terms",
    "void_below_log_term",
    "block_log_term",
    "total_log_likelihood",
    "initial_augmentation",
    "remap_augmentation",
    "conditional_log_normalizer",
    "sample_conditional",
    "frechet_column",
    "frechet_column_inverse",
    "censored_cluster_log_integral",
    "observed_log_likelihood",
]

# tolerance when checking that imputed values sit inside their interval
_BOUND_RTOL = 1e-9


class LikelihoodError(ValueError):
    pass


def frechet_column(y: np.ndarray, v: float, sigma: float, xi: float, zeta: float):
    """Frechet values and log Jacobians of excesses ``y > v`` under scalar parameters.

    Returns ``None`` when some ``y`` lies beyond the upper endpoint.
    """
    z = (y - v) / sigma
    if abs(xi) < SHAPE_EPS:
        log_s = -z
    else:
        a = xi * z
        if a.size and a.min() <= -1.0:
            return None
        log_s = -np.log1p(a) / xi
    x = -1.0 / np.log1p(-zeta * np.exp(log_s))
    if x.size and not np.isfinite(x).all():
        return None
    lj = math.log(zeta) - math.log(sigma) + (1.0 + xi) * log_s + 1.0 / x + 2.0 * np.log(x)
    return x, lj


def frechet_column_inverse(x: np.ndarray, v: float, sigma: float, xi: float, zeta: float) -> np.ndarray:
    """Inverse of :func:`frechet_column` for ``x > u``."""
    log_s = np.log(-np.expm1(-1.0 / x) / zeta)
    if abs(xi) < SHAPE_EPS:
        return v - sigma * log_s
    return v + sigma * np.expm1(-xi * log_s) / xi


def _site_arrays(margins: MarginalParams, rates: ExceedanceRates):
    return margins.scales, margins.shapes, rates.zetas


def _to_frechet(y, v, margins, rates):
    sigma, xi, zeta = _site_arrays(margins, rates)
    with np.errstate(invalid="ignore"):
        return frechet_arr(np.maximum(y, v), v, sigma, xi, zeta)


def _lower_bound(lower, v, margins, rates):
    """Frechet image of a lower bound; bounds at or below ``v`` carry no information."""
    x = _to_frechet(np.where(lower >= v, lower, v), v, margins, rates)
    return np.where(lower >= v, x, 0.0)


def _upper_bound(upper, v, u, margins, rates):
    finite = np.isfinite(upper)
    x = _to_frechet(np.where(finite, upper, v), v, margins, rates)
    return np.where(~finite, np.inf, np.where(upper <= v, u, x))


@dataclass(frozen=True, eq=False)
class LikelihoodData:
    """Array view of a declustered panel, ready for repeated evaluation."""

    kind: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    block_lengths: np.ndarray
    block_bounds: np.ndarray
    below_days: int
    tau: float
    thresholds: np.ndarray
    rates: ExceedanceRates
    site_names: tuple[str, ...] = ()

    @classmethod
    def from_summary(cls, summary: DeclusterSummary, rates: ExceedanceRates, tau: float | None = None):
        d = summary.n_sites
        cms = summary.clusters
        kind = np.array([cm.kind for cm in cms], dtype=np.int8).reshape(-1, d)
        value = np.array([cm.value for cm in cms], dtype=float).reshape(-1, d)
        lower = np.array([cm.lower for cm in cms], dtype=float).reshape(-1, d)
        upper = np.array([cm.upper for cm in cms], dtype=float).reshape(-1, d)
        lengths = np.array([b.length for b in summary.blocks], dtype=float)
        bounds = np.array([b.upper_bounds for b in summary.blocks], dtype=float).reshape(-1, d)
        t = summary.mean_cluster_size if tau is None else float(tau)
        if not t >= 1:
            raise LikelihoodError(f"mean cluster size must be at least 1, got {t}")
        return cls(
            kind, value, lower, upper, lengths, bounds, int(summary.below_days), t,
            np.asarray(summary.thresholds, dtype=float), rates, tuple(summary.site_names),
        )

    @property
    def n_clusters(self) -> int:
        return self.kind.shape[0]

    @property
    def n_sites(self) -> int:
        return self.thresholds.size

    @property
    def u(self) -> np.ndarray:
        return self.rates.frechet_thresholds

    @property
    def exact_above(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.kind == CensorKind.EXACT) & (self.value > self.thresholds)

    @property
    def imputed(self) -> np.ndarray:
        return ~self.exact_above

    def exact_excesses(self, j: int) -> np.ndarray:
        col = self.exact_above[:, j]
        return self.value[col, j] - self.thresholds[j]

    def frechet_bounds(self, margins: MarginalParams) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate Frechet intervals; exact coordinates get ``[x, x]``."""
        v, u = self.thresholds, self.u
        lo = _lower_bound(self.lower, v, margins, self.rates)
        hi = _upper_bound(self.upper, v, u, margins, self.rates)
        ex = self.exact_above
        x = _to_frechet(np.where(ex, self.value, v), v, margins, self.rates)
        return np.where(ex, x, lo), np.where(ex, x, hi)

    def block_regions(self, margins: MarginalParams) -> np.ndarray:
        """Box corners ``u~`` of the undetermined blocks, shape ``(n_blocks, d)``."""
        return _upper_bound(self.block_bounds, self.thresholds, self.u, margins, self.rates)

    def log_jacobians(self, margins: MarginalParams) -> np.ndarray:
        """Summed log Jacobians of the exact excesses per cluster."""
        sigma, xi, zeta = _site_arrays(margins, self.rates)
        ex = self.exact_above
        y = np.where(ex, self.value, self.thresholds + sigma)
        with np.errstate(invalid="ignore", divide="ignore"):
            lj = log_jacobian_arr(y, self.thresholds, sigma, xi, zeta)
        return np.where(ex, lj, 0.0).sum(axis=1)


class ExtremeRegion:
    """``A_u``: the orthant minus the box ``[0, u]``, with ``lambda(A_u)`` cached per mixture."""

    def __init__(self, u, method: str = "fast"):
        self.u = np.asarray(u, dtype=float)
        self.method = method
        self._psi = None
        self._value = np.nan
        self._error = np.nan

    def measure(self, psi: DMParams) -> float:
        if psi is not self._psi:
            r = exponent_measure_region(self.u, psi, method=self.method)
            self._psi, self._value, self._error = psi, r.value, r.error
        return self._value

    @property
    def error(self) -> float:
        return self._error


@dataclass
class AugmentedState:
    """Frechet-scale values of every cluster coordinate.

    ``x[i, j]`` is the transformed observation for exact excesses and an
    imputed value inside the transformed censoring interval otherwise.
    """

    x: np.ndarray
    imputed: np.ndarray

    def copy(self) -> AugmentedState:
        return AugmentedState(self.x.copy(), self.imputed)

    def check(self, lo, hi) -> None:
        tol = _BOUND_RTOL * np.maximum(np.abs(lo), 1.0)
        bad = self.imputed & ((self.x < lo - tol) | (self.x > hi + tol * np.isfinite(hi)))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise LikelihoodError(
                f"cluster {i}, site {j}: value {self.x[i, j]} outside its interval [{lo[i, j]}, {hi[i, j]}]"
            )


@dataclass(frozen=True)
class LikelihoodTerms:
    log_point_terms: np.ndarray
    log_void_below: float
    log_void_blocks: np.ndarray

    @property
    def total(self) -> float:
        return float(self.log_point_terms.sum() + self.log_void_below + self.log_void_blocks.sum())

    def as_dict(self) -> dict:
        return {
            "log_point_terms": self.log_point_terms.tolist(),
            "log_void_below": self.log_void_below,
            "log_void_blocks": self.log_void_blocks.tolist(),
            "total": self.total,
        }


def initial_augmentation(data: LikelihoodData, margins: MarginalParams) -> AugmentedState:
    """Start imputed coordinates inside their intervals.

    Finite intervals start at their midpoint, half-lines at twice the larger of
    their lower end and ``u_j``.
    """
    lo, hi = data.frechet_bounds(margins)
    u = np.broadcast_to(data.u, lo.shape)
    x = np.where(np.isfinite(hi), 0.5 * (lo + np.where(np.isfinite(hi), hi, 0.0)), 2.0 * np.maximum(lo, u))
    x = np.where(data.exact_above, lo, x)
    return AugmentedState(x, data.imputed)


def remap_augmentation(data: LikelihoodData, aug: AugmentedState, old: MarginalParams, new: MarginalParams):
    """Carry imputed excesses across a change of margins at fixed original-scale value.

    Imputed values above ``u_j`` are pulled back to the data scale under
    ``old`` and pushed forward under ``new``; values at or below ``u_j`` are
    kept. Returns the new augmented state and the log Jacobian of the map, or
    ``(None, -inf)`` when a value leaves the support of the new margins.
    """
    u = data.u
    move = aug.imputed & (aug.x > u)
    if not move.any():
        return aug, 0.0
    v = data.thresholds
    zeta = data.rates.zetas
    cols = np.flatnonzero(move.any(axis=0))
    x = aug.x.copy()
    log_jac = 0.0
    for j in cols:
        rows = move[:, j]
        y = frechet_inverse_arr(aug.x[rows, j], v[j], old.scales[j], old.shapes[j], zeta[j])
        with np.errstate(invalid="ignore", divide="ignore"):
            x_new = frechet_arr(y, v[j], new.scales[j], new.shapes[j], zeta[j])
            lj_new = log_jacobian_arr(y, v[j], new.scales[j], new.shapes[j], zeta[j])
            lj_old = log_jacobian_arr(y, v[j], old.scales[j], old.shapes[j], zeta[j])
        if not np.all(np.isfinite(x_new)) or not np.all(np.isfinite(lj_new)):
            return None, -np.inf
        x[rows, j] = x_new
        log_jac += float(np.sum(lj_new - lj_old))
    return AugmentedState(x, aug.imputed), log_jac


def cluster_log_terms(x: np.ndarray, data: LikelihoodData, margins: MarginalParams, psi: DMParams) -> np.ndarray:
    """Vectorized point terms: log exponent density plus exact-excess log Jacobians."""
    if data.n_clusters == 0:
        return np.zeros(0)
    with np.errstate(invalid="ignore", divide="ignore"):
        dens = log_exponent_density(x, psi)
    out = dens + data.log_jacobians(margins)
    bad = ~np.isfinite(x).all(axis=1) | ~(x > 0).all(axis=1)
    return np.where(bad | np.isnan(out), -np.inf, out)


def cluster_log_term(
    cm: ClusterMaximum, x, margins: MarginalParams, rates: ExceedanceRates, thresholds, psi: DMParams
) -> float:
    """Point term of one cluster maximum.

    ``x`` supplies Frechet values for the censored coordinates; entries at
    exact excesses are ignored and recomputed from the data.
    """
    summary = DeclusterSummary(tuple(thresholds), 1, 0, [cm], 0, [], 0, 0, 1.0)
    data = LikelihoodData.from_summary(summary, rates)
    lo, hi = data.frechet_bounds(margins)
    xx = np.where(data.exact_above, lo, np.asarray(x, dtype=float).reshape(1, -1))
    AugmentedState(xx, data.imputed).check(lo, hi)
    return float(cluster_log_terms(xx, data, margins, psi)[0])


def void_below_log_term(below_days: float, tau: float, region: ExtremeRegion, psi: DMParams) -> float:
    if below_days == 0:
        return 0.0
    return -(below_days / tau) * region.measure(psi)


def block_log_term(
    block: UndeterminedBlock,
    margins: MarginalParams,
    rates: ExceedanceRates,
    thresholds,
    psi: DMParams,
    tau: float,
    method: str = "fast",
) -> float:
    v = np.asarray(thresholds, dtype=float)
    corner = _upper_bound(np.asarray(block.upper_bounds, dtype=float), v, rates.frechet_thresholds, margins, rates)
    if np.all(np.isinf(corner)):
        return 0.0
    lam = exponent_measure_region(corner, psi, method=method).value
    return -(block.length / tau) * lam


def _block_terms(data: LikelihoodData, margins: MarginalParams, psi: DMParams) -> np.ndarray:
    if data.block_lengths.size == 0:
        return np.zeros(0)
    corners = data.block_regions(margins)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    lam = np.zeros(len(uniq))
    live = ~np.all(np.isinf(uniq), axis=1)
    if live.any():
        lam[live] = exponent_measure_many(uniq[live], psi)
    return -(data.block_lengths / data.tau) * lam[inv.ravel()]


def total_log_likelihood(
    data: LikelihoodData,
    aug: AugmentedState,
    margins: MarginalParams,
    psi: DMParams,
    region: ExtremeRegion | None = None,
    check: bool = True,
) -> LikelihoodTerms:
    """Sum of cluster point terms, the below-threshold void term and block void terms."""
    if aug.x.shape != data.kind.shape:
        raise LikelihoodError(f"augmented state has shape {aug.x.shape}, expected {data.kind.shape}")
    lo, hi = data.frechet_bounds(margins)
    if check:
        aug.check(lo, hi)
    x = np.where(data.exact_above, lo, aug.x)
    region = region or ExtremeRegion(data.u)
    points = cluster_log_terms(x, data, margins, psi)
    below = void_below_log_term(data.below_days, data.tau, region, psi)
    blocks = _block_terms(data, margins, psi)
    return LikelihoodTerms(points, below, blocks)


def _conditional_weights(x_rest: np.ndarray, j: int, lo: np.ndarray, hi: np.ndarray, psi: DMParams):
    """Mixture representation of the exponent density along coordinate ``j``.

    With ``S`` the sum of the other coordinates and ``t = x_j / (x_j + S)``,
    the density restricted to ``[lo, hi]`` is a mixture over components of
    ``Beta(alpha_j, nu - alpha_j + 1)`` laws truncated to ``[t(lo), t(hi)]``.
    Returns log weights (including truncated masses, shape ``(n, k)``),
    the Beta parameters and the truncation data needed for sampling.
    """
    a_all = psi.alphas
    d = psi.dim
    others = [l for l in range(d) if l != j]
    S = x_rest[:, others].sum(axis=1)
    a = a_all[:, j]
    b = psi.shapes - a + 1.0
    # t and 1 - t at both ends, each computed without cancellation
    ta, ta_c = lo / (lo + S), S / (lo + S)
    with np.errstate(invalid="ignore"):
        tb = np.where(np.isinf(hi), 1.0, hi / (hi + S))
        tb_c = np.where(np.isinf(hi), 0.0, S / (hi + S))
    n, k = S.size, a.size
    Pa = np.zeros((n, k))
    at_zero = ta == 0.0
    if not at_zero.all():
        Pa[~at_zero] = betainc(a[None], b[None], ta[~at_zero, None])
    Pb = betainc(a[None], b[None], tb[:, None])
    # complementary form only where the lower tail has lost its precision
    use_upper = Pa > 0.5
    Qa = np.ones((n, k))
    mass = Pb - Pa
    rows = use_upper.any(axis=1)
    if rows.any():
        Qa[rows] = betainc(b[None], a[None], ta_c[rows, None])
        Qb = betainc(b[None], a[None], tb_c[rows, None])
        mass[rows] = np.where(use_upper[rows], Qa[rows] - Qb, mass[rows])
    log_ratio = np.log(x_rest[:, others] / S[:, None])
    base = (
        np.log(psi.weights)
        + gammaln(psi.shapes)
        - gammaln(a_all).sum(axis=1)
        + betaln(a, b)
    )
    with np.errstate(divide="ignore"):
        logw = base[None] + log_ratio @ (a_all[:, others] - 1.0).T + np.log(np.maximum(mass, 0.0))
    return logw, a, b, S, (use_upper, Pa, Qa, mass)


def conditional_log_normalizer(x_rest, j: int, lo, hi, psi: DMParams) -> np.ndarray:
    """``log int_lo^hi exponent_density(x) dx_j`` with the other coordinates fixed."""
    x_rest = np.atleast_2d(np.asarray(x_rest, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    logw, *_rest = _conditional_weights(x_rest, j, lo, hi, psi)
    S = _rest[2]
    d = psi.dim
    return np.log(d) - d * np.log(S) + logsumexp(logw, axis=1)


def sample_conditional(x: np.ndarray, j: int, lo: np.ndarray, hi: np.ndarray, psi: DMParams, rng) -> np.ndarray:
    """Exact draws of coordinate ``j`` from the exponent density truncated to ``[lo, hi]``.

    ``x`` holds the current points (rows); only the other coordinates matter.
    Degenerate intervals ``[a, a]`` return ``a``; other rows whose interval
    carries no numerically representable mass keep their current value.
    """
    n = x.shape[0]
    if n == 0:
        return np.zeros(0)
    logw, a, b, S, (use_upper, Pa, Qa, mass) = _conditional_weights(x, j, lo, hi, psi)
    top = logw.max(axis=1, keepdims=True)
    ok = np.isfinite(top[:, 0])
    w = np.exp(logw - np.where(np.isfinite(top), top, 0.0))
    w[~ok] = 1.0
    cum = np.cumsum(w, axis=1)
    pick = (rng.random(n)[:, None] * cum[:, -1:] > cum).sum(axis=1)
    pick = np.minimum(pick, psi.k - 1)
    r = np.arange(n)
    am, bm = a[pick], b[pick]
    U = rng.random(n)
    up = use_upper[r, pick]
    out = np.empty(n)
    m = mass[r, pick]
    with np.errstate(invalid="ignore", divide="ignore"):
        lo_side = ~up
        if lo_side.any():
            p_low = np.clip(Pa[r, pick][lo_side] + U[lo_side] * m[lo_side], 0.0, 1.0)
            t = betaincinv(am[lo_side], bm[lo_side], p_low)
            out[lo_side] = S[lo_side] * t / (1.0 - t)
        if up.any():
            q_up = np.clip(Qa[r, pick][up] - U[up] * m[up], 0.0, 1.0)
            t_c = betaincinv(bm[up], am[up], q_up)
            out[up] = S[up] * (1.0 - t_c) / t_c
    out = np.clip(out, lo, hi)
    out = np.where(ok & np.isfinite(out) & (out > 0), out, x[:, j])
    return np.where(hi <= lo, lo, out)


def _log_gamma_box(a: float, lo: float, hi: float, t: float) -> float:
    """``log[P(a, hi t) - P(a, lo t)]`` with the regularized lower incomplete gamma ``P``."""
    if lo * t > a:
        mass = gammaincc(a, lo * t) - (gammaincc(a, hi * t) if math.isfinite(hi) else 0.0)
    else:
        mass = (gammainc(a, hi * t) if math.isfinite(hi) else 1.0) - gammainc(a, lo * t)
    return math.log(mass) if mass > 0 else -math.inf


def censored_cluster_log_integral(x, lo, hi, exact, psi: DMParams) -> float:
    """``log`` of the exponent density integrated over the censored coordinates.

    ``exact`` flags the coordinates fixed at ``x``; the others range over
    ``[lo, hi]``. For one Dirichlet component, writing
    ``r^-(nu + 1) = int_0^inf t^nu e^(-r t) dt / Gamma(nu + 1)`` factorizes the
    density, and each censored coordinate integrates to a difference of
    regularized incomplete gamma functions. What remains is one integral
    over ``t``, done by adaptive quadrature on ``log t``.
    """
    x, lo, hi = (np.asarray(a, dtype=float) for a in (x, lo, hi))
    exact = np.asarray(exact, dtype=bool)
    d = psi.dim
    E, C = np.flatnonzero(exact), np.flatnonzero(~exact)
    if C.size == 0:
        return float(log_exponent_density(x, psi))
    if np.any(hi[C] <= lo[C]):
        raise LikelihoodError("censoring interval of zero width")
    xe = x[E]
    log_xe = np.log(xe)
    parts = []
    for p, nu, a in zip(psi.weights, psi.shapes, psi.alphas):
        const = math.log(d * p / nu) + float(np.sum((a[E] - 1.0) * log_xe - gammaln(a[E])))
        power = nu - float(a[C].sum()) + 1.0
        aC, loC, hiC = a[C], lo[C], hi[C]

        def L(s, const=const, power=power, aC=aC, loC=loC, hiC=hiC, a=a):
            t = math.exp(s)
            val = const + power * s - t * float(xe.sum())
            for ac, l, h in zip(aC, loC, hiC):
                val += _log_gamma_box(ac, l, h, t)
            return val

        parts.append(L)
    modes = []
    for L in parts:
        res = minimize_scalar(lambda s, L=L: -L(s) if np.isfinite(L(s)) else 1e300, bounds=(-80.0, 80.0),
                              method="bounded", options={"xatol": 1e-6})
        modes.append(float(res.x))
    shift = max(L(m) for L, m in zip(parts, modes))
    if not np.isfinite(shift):
        return -math.inf

    def f(s):
        return sum(math.exp(L(s) - shift) for L in parts)

    a_, b_ = min(modes) - 60.0, max(modes) + 60.0
    pts = sorted(set(round(m, 9) for m in modes))
    val, _ = quad(f, a_, b_, points=pts, limit=400, epsabs=0.0, epsrel=1e-10)
    return shift + math.log(val) if val > 0 else -math.inf


def observed_log_likelihood(data: LikelihoodData, margins: MarginalParams, psi: DMParams) -> LikelihoodTerms:
    """Log-likelihood with every censored coordinate integrated out exactly."""
    lo, hi = data.frechet_bounds(margins)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi[data.exact_above]))):
        return LikelihoodTerms(np.full(data.n_clusters, -np.inf), 0.0, np.zeros(0))
    ex = data.exact_above
    points = np.empty(data.n_clusters)
    for c in range(data.n_clusters):
        points[c] = censored_cluster_log_integral(lo[c], lo[c], hi[c], ex[c], psi)
    points = points + data.log_jacobians(margins)
    region = ExtremeRegion(data.u)
    below = void_below_log_term(data.below_days, data.tau, region, psi)
    return LikelihoodTerms(points, below, _block_terms(data, margins, psi))

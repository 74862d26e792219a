"""Dirichlet-mixture angular measure on the unit simplex.

The angular measure ``H`` has density ``h(w) = sum_m p_m Dir(w; nu_m mu_m)``
and must have its centre of mass at ``(1/d, ..., 1/d)``. The associated
exponent measure has density ``d h(w) r^-(d+1)`` with ``r = sum(x)`` and
``w = x / r``.

Exponent measures of "outside the box" regions use the Gamma representation
of the Dirichlet law: with independent ``G_j ~ Gamma(nu mu_j)`` the total
``S = sum G_j`` is independent of ``W = G / S``, so for any region box ``u``

    E[max_j W_j / u_j] = E[max_j G_j / u_j] / nu
                       = (1 / nu) * int_0^inf 1 - prod_j P(nu mu_j, u_j t) dt

where ``P`` is the regularized lower incomplete gamma function. This is a
one-dimensional integral whatever the dimension.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import betainc, gammainc, gammaincinv, gammaln, logsumexp, xlogy
from scipy.stats import qmc

__all__ = [
    "MOMENT_TOL",
    "WEIGHT_TOL",
    "ConstraintError",
    "DirichletComponent",
    "DMParams",
    "RegionMeasure",
    "dirichlet_log_density",
    "dirichlet_density",
    "dm_log_density",
    "dm_density",
    "solve_last_center",
    "sample_dm",
    "log_exponent_density",
    "exponent_density",
    "exponent_measure_region",
    "exponent_measure_many",
    "marginal_pair",
    "pair_angular_density",
    "chi_coefficient",
    "joint_return_period",
    "independent_joint_return_period",
    "conditional_tail",
    "simulate_exponent_points",
]

MOMENT_TOL = 1e-10
WEIGHT_TOL = 1e-12
# solved centres closer than this to the simplex boundary are rejected
CENTER_FLOOR = 1e-12


class ConstraintError(ValueError):
    """A mixture parameter violates the centre-of-mass or simplex constraints."""


@dataclass(frozen=True)
class DirichletComponent:
    center: np.ndarray
    shape: float

    def __post_init__(self):
        mu = np.array(self.center, dtype=float).ravel()
        if np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ConstraintError(f"center must lie in the open simplex, got {mu}")
        if not self.shape > 0:
            raise ConstraintError(f"shape must be positive, got {self.shape}")
        object.__setattr__(self, "center", mu)
        object.__setattr__(self, "shape", float(self.shape))

    @property
    def alpha(self) -> np.ndarray:
        return self.shape * self.center


@dataclass(frozen=True, eq=False)
class DMParams:
    """Dirichlet mixture ``psi = (weights, centers, shapes)``.

    ``centers`` has shape ``(k, d)``. The last centre is the one determined by
    the centre-of-mass condition when parameters are built with
    :meth:`from_free`.
    """

    weights: np.ndarray
    centers: np.ndarray
    shapes: np.ndarray

    def __post_init__(self):
        p = np.array(self.weights, dtype=float).ravel()
        mu = np.array(self.centers, dtype=float, ndmin=2)
        nu = np.array(self.shapes, dtype=float).ravel()
        k, d = mu.shape
        if p.size != k or nu.size != k:
            raise ConstraintError("weights, centers and shapes disagree on k")
        if not (p.min() > 0 and abs(p.sum() - 1.0) <= WEIGHT_TOL):
            raise ConstraintError(f"weights must be positive and sum to 1, got {p}")
        if not (mu.min() > 0 and np.abs(mu.sum(axis=1) - 1.0).max() <= 1e-12):
            raise ConstraintError("centers must lie in the open simplex")
        if not (nu.min() > 0 and nu.max() < np.inf):
            raise ConstraintError(f"shapes must be positive and finite, got {nu}")
        if not np.abs(p @ mu - 1.0 / d).max() <= MOMENT_TOL:
            raise ConstraintError(f"centre of mass {p @ mu} is not the simplex centre")
        for a in (p, mu, nu):
            a.setflags(write=False)
        object.__setattr__(self, "weights", p)
        object.__setattr__(self, "centers", mu)
        object.__setattr__(self, "shapes", nu)

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        """Dirichlet parameters ``nu_m mu_m``, shape ``(k, d)``."""
        return self.shapes[:, None] * self.centers

    def components(self) -> list[DirichletComponent]:
        return [DirichletComponent(c, s) for c, s in zip(self.centers, self.shapes)]

    @classmethod
    def from_free(cls, weights, free_centers, shapes) -> DMParams:
        """Build from weights, the first ``k - 1`` centres and all shapes."""
        p = np.asarray(weights, dtype=float)
        p = p / p.sum()
        free = np.asarray(free_centers, dtype=float).reshape(p.size - 1, -1) if p.size > 1 else None
        d = free.shape[1] if free is not None else None
        if d is None:
            raise ConstraintError("dimension is ambiguous for k = 1; use DMParams.single")
        last = solve_last_center(p, free)
        return cls(p, np.vstack([free, last]), shapes)

    @classmethod
    def single(cls, d: int, shape: float) -> DMParams:
        """One component, forced to the simplex centre."""
        return cls([1.0], np.full((1, d), 1.0 / d), [shape])


def solve_last_center(weights, free_centers) -> np.ndarray:
    """Centre of the last component implied by the centre-of-mass condition.

    ``free_centers`` holds the first ``k - 1`` centres as rows (it may be empty
    or ``None`` when ``k = 1``, in which case pass ``weights`` of length one and
    the dimension through a ``(0, d)`` array).
    """
    p = np.asarray(weights, dtype=float)
    free = np.asarray(free_centers, dtype=float)
    if free.ndim == 1:
        free = free.reshape(1, -1) if free.size else free.reshape(0, 0)
    d = free.shape[1]
    if free.shape[0] != p.size - 1:
        raise ValueError(f"need {p.size - 1} free centres, got {free.shape[0]}")
    last = (np.full(d, 1.0 / d) - p[:-1] @ free) / p[-1]
    if not last.min() > CENTER_FLOOR:
        raise ConstraintError("solved centre is outside the open simplex")
    return last / last.sum()


def dirichlet_log_density(w, center, shape):
    alpha = float(shape) * np.asarray(center, dtype=float)
    w = np.asarray(w, dtype=float)
    return gammaln(alpha.sum()) - gammaln(alpha).sum() + xlogy(alpha - 1.0, w).sum(axis=-1)


def dirichlet_density(w, center, shape):
    with np.errstate(over="ignore"):
        return np.exp(dirichlet_log_density(w, center, shape))


def dm_log_density(w, psi: DMParams):
    """Log mixture density at points ``w`` of shape ``(..., d)``."""
    w = np.asarray(w, dtype=float)
    a = psi.alphas
    const = gammaln(psi.shapes) - gammaln(a).sum(axis=1)
    if np.all(w > 0):
        terms = np.log(w) @ (a - 1.0).T
    else:
        terms = xlogy(a - 1.0, w[..., None, :]).sum(axis=-1)
    return logsumexp(terms + const + np.log(psi.weights), axis=-1)


def dm_log_density_from_logs(log_w: np.ndarray, psi: DMParams) -> np.ndarray:
    """:func:`dm_log_density` from precomputed ``log w`` rows (all ``w > 0``)."""
    a = psi.alphas
    terms = log_w @ (a - 1.0).T + (gammaln(psi.shapes) - gammaln(a).sum(axis=1) + np.log(psi.weights))
    top = terms.max(axis=-1)
    return top + np.log(np.exp(terms - top[..., None]).sum(axis=-1))


def dm_density(w, psi: DMParams):
    with np.errstate(over="ignore"):
        return np.exp(dm_log_density(w, psi))


def sample_dm(psi: DMParams, count: int, rng=None) -> np.ndarray:
    """Draw ``count`` angles from the mixture; returns shape ``(count, d)``.

    ``rng`` is a seed or a :class:`numpy.random.Generator`. Gamma variates are
    drawn in log space (``Gamma(a) = Gamma(a + 1) U^(1/a)``) so that tiny
    shape parameters do not underflow.
    """
    rng = np.random.default_rng(rng)
    comp = rng.choice(psi.k, size=count, p=psi.weights)
    a = psi.alphas[comp]
    log_g = np.log(rng.gamma(a + 1.0)) + np.log(rng.random(a.shape)) / a
    log_g -= log_g.max(axis=1, keepdims=True)
    g = np.exp(log_g)
    return g / g.sum(axis=1, keepdims=True)


def simulate_exponent_points(psi: DMParams, count: int, r0: float = 1.0, rng=None) -> np.ndarray:
    """Points of the exponent measure restricted to ``{sum(x) > r0}``.

    The radius is Pareto with ``P(R > r) = r0 / r`` and the angle is drawn
    from ``H`` independently.
    """
    rng = np.random.default_rng(rng)
    w = sample_dm(psi, count, rng)
    r = r0 / rng.random(count)
    return r[:, None] * w


def log_exponent_density(x, psi: DMParams):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    r = x.sum(axis=-1)
    return math.log(d) + dm_log_density(x / r[..., None], psi) - (d + 1) * np.log(r)


def exponent_density(x, psi: DMParams):
    return np.exp(log_exponent_density(x, psi))


@dataclass(frozen=True)
class RegionMeasure:
    value: float
    error: float
    ok: bool = True


def _max_integrand(t, a, u):
    return 1.0 - np.prod(gammainc(a, u * t))


# gamma-cdf levels whose quantiles become quadrature breakpoints
_QUAD_LEVELS = (1e-16, 1e-8, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95, 1 - 1e-3, 1 - 1e-8, 1 - 1e-16)


def _component_quad(a, u, epsrel=1e-11):
    """``int_0^inf 1 - prod P(a_j, u_j t) dt`` by adaptive quadrature in log t.

    Breakpoints sit at gamma quantiles of every coordinate, so concentrated
    components (large shapes) get panels as narrow as their transitions.
    """
    finite = np.isfinite(u)
    if not finite.any():
        return 0.0, 0.0
    a, u = a[finite], u[finite]
    edges = np.unique(gammaincinv(a[:, None], np.array(_QUAD_LEVELS)[None, :]) / u[:, None])
    edges = edges[edges > 0]
    # below the first edge every P is under 1e-16, so the integrand is 1
    val, err = float(edges[0]), float(edges[0]) * 1e-16
    f = lambda z: _max_integrand(math.exp(z), a, u) * math.exp(z)  # noqa: E731
    zs = np.log(edges)
    for z0, z1 in zip(zs[:-1], zs[1:]):
        v, e = integrate.quad(f, z0, z1, epsabs=0.0, epsrel=epsrel, limit=200)
        val += v
        err += e
    tail, tail_err = integrate.quad(lambda t: _max_integrand(t, a, u), edges[-1], np.inf, limit=100)
    return val + tail, err + tail_err


def _pair_closed_form(a, b, u1, u2):
    """``E[max(B / u1, (1 - B) / u2)]`` for ``B ~ Beta(a, b)``, vectorized."""
    with np.errstate(divide="ignore", invalid="ignore"):
        w_star = np.where(np.isinf(u1), 1.0, np.where(np.isinf(u2), 0.0, u1 / (u1 + u2)))
        inv1 = np.where(np.isinf(u1), 0.0, 1.0 / u1)
        inv2 = np.where(np.isinf(u2), 0.0, 1.0 / u2)
    s = a + b
    upper = (a / s) * inv1 * (1.0 - betainc(a + 1.0, b, w_star))
    lower = (b / s) * inv2 * betainc(a, b + 1.0, w_star)
    return upper + lower


# composite Gauss-Legendre rule on log t used by the fast path
_GL_PANELS = 8
_GL_NODES = 16


@lru_cache(maxsize=1)
def _gl_rule():
    x, w = np.polynomial.legendre.leggauss(_GL_NODES)
    return x, w


def _gamma_integrals_fast(alphas, U):
    """Vectorized ``int_0^inf 1 - prod P(alpha_j, u_j t) dt``; returns ``(m, k)``."""
    alphas = np.asarray(alphas, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    # per-component quantiles where the gamma cdf leaves 0 / reaches 1
    q_lo = gammaincinv(alphas, 1e-16)
    q_med = gammaincinv(alphas, 0.5)
    q_hi = gammaincinv(alphas, 1.0 - 1e-16)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_u = np.where(np.isinf(U), 0.0, 1.0 / U)[:, None, :]
    t_med = (q_med[None] * inv_u).max(axis=2)
    t_hi = (q_hi[None] * inv_u).max(axis=2)
    # the integral is at least t_med / 2 and at least every alpha_j / u_j
    floor = np.maximum(t_med, (alphas[None] * inv_u).max(axis=2))
    t_lo = np.maximum((q_lo[None] * inv_u).max(axis=2), 1e-13 * floor)
    empty = t_hi <= 0
    t_lo = np.where(empty, 1.0, t_lo)
    t_hi = np.where(empty, 2.0, np.maximum(t_hi, t_lo * 1.0001))
    z0, z1 = np.log(t_lo), np.log(t_hi)
    x, w = _gl_rule()
    edges = np.linspace(0.0, 1.0, _GL_PANELS + 1)
    frac = (edges[:-1, None] + (x[None] + 1.0) * 0.5 * (edges[1:] - edges[:-1])[:, None]).ravel()
    wts = np.tile(w, _GL_PANELS) * 0.5 / _GL_PANELS
    z = z0[..., None] + (z1 - z0)[..., None] * frac
    t = np.exp(z)
    P = gammainc(alphas[None, :, :, None], U[:, None, :, None] * t[:, :, None, :])
    g = 1.0 - P.prod(axis=2)
    body = (g * t * wts).sum(axis=-1) * (z1 - z0)
    out = body + t_lo
    return np.where(empty, 0.0, out)


def exponent_measure_many(U, psi: DMParams) -> np.ndarray:
    """Fast ``lambda(A_u)`` for each row of ``U`` (entries may be ``+inf``).

    Uses the incomplete-Beta closed form when ``d = 2`` and a composite
    Gauss-Legendre rule on the Gamma-representation integral otherwise.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    d = psi.dim
    if d == 2:
        a = psi.alphas
        vals = _pair_closed_form(a[None, :, 0], a[None, :, 1], U[:, 0, None], U[:, 1, None])
        return d * vals @ psi.weights
    ints = _gamma_integrals_fast(psi.alphas, U)
    return d * (ints / psi.shapes) @ psi.weights


def _qmc_alphas_points(psi: DMParams, nodes: int, seed):
    sob = qmc.Sobol(d=psi.dim, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(nodes, 2))))
    return sob.random_base2(m)


def exponent_measure_region(u, psi: DMParams, method: str = "quad", nodes: int = 2**16, shifts: int = 8, seed=0):
    """``lambda(A_u)`` where ``A_u`` is the orthant minus the box ``[0, u]``.

    Methods: ``"quad"`` (adaptive quadrature of the Gamma-representation
    integral, default), ``"fast"`` (fixed rule used inside the sampler),
    ``"qmc"`` (randomized quasi-Monte Carlo over the simplex, error from the
    spread of ``shifts`` independent scramblings).
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size != psi.dim:
        raise ValueError(f"u has {u.size} entries for a {psi.dim}-dimensional mixture")
    if np.any(~(u > 0)):
        raise ValueError("Frechet thresholds must be positive")
    d = psi.dim
    if np.all(np.isinf(u)):
        return RegionMeasure(0.0, 0.0)
    if method == "fast":
        return RegionMeasure(float(exponent_measure_many(u[None], psi)[0]), float("nan"))
    if method == "quad":
        total, err, ok = 0.0, 0.0, True
        for p, a, nu in zip(psi.weights, psi.alphas, psi.shapes):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    v, e = _component_quad(a, u)
                except integrate.IntegrationWarning:
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    v, e = _component_quad(a, u)
                    ok = False
            total += p * v / nu
            err += p * e / nu
        return RegionMeasure(d * total, d * err, ok)
    if method == "qmc":
        per_node = max(nodes // shifts, 2)
        estimates = []
        with np.errstate(divide="ignore"):
            inv_u = np.where(np.isinf(u), 0.0, 1.0 / u)
        for s in range(shifts):
            base = _qmc_alphas_points(psi, per_node, np.random.default_rng([seed, s]))
            est = 0.0
            for p, a in zip(psi.weights, psi.alphas):
                g = gammaincinv(a, np.clip(base, 1e-300, 1.0 - 1e-16))
                w = g / g.sum(axis=1, keepdims=True)
                est += p * np.mean((w * inv_u).max(axis=1))
            estimates.append(d * est)
        estimates = np.asarray(estimates)
        return RegionMeasure(float(estimates.mean()), float(estimates.std(ddof=1) / math.sqrt(shifts)))
    raise ValueError(f"unknown method {method!r}")


def marginal_pair(psi: DMParams, i: int, j: int) -> DMParams:
    """Bivariate angular mixture of coordinates ``(i, j)``.

    Each component aggregates to a Beta law with parameters
    ``(nu mu_i, nu mu_j)`` and reweights by its share ``mu_i + mu_j`` of the
    pair's exponent mass.
    """
    if i == j:
        raise ValueError("pair needs two distinct coordinates")
    d = psi.dim
    mass = psi.centers[:, i] + psi.centers[:, j]
    w = 0.5 * d * psi.weights * mass
    centers = np.column_stack([psi.centers[:, i], psi.centers[:, j]]) / mass[:, None]
    # renormalize away rounding so the centre-of-mass check holds exactly
    w = w / w.sum()
    centers[:, 1] = 1.0 - centers[:, 0]
    shift = 0.5 - w @ centers[:, 0]
    centers[:, 0] += shift
    centers[:, 1] -= shift
    return DMParams(w, centers, psi.shapes * mass)


def pair_angular_density(w, psi: DMParams, i: int, j: int):
    """Density of the bivariate angular measure at ``w`` in (0, 1)."""
    pair = marginal_pair(psi, i, j)
    w = np.asarray(w, dtype=float)
    return dm_density(np.stack([w, 1.0 - w], axis=-1), pair)


def chi_coefficient(i: int, j: int, psi: DMParams, method: str = "beta") -> float:
    """Tail dependence coefficient ``chi_ij = 2 - V_ij(1, 1)``.

    ``"beta"`` uses the incomplete-Beta expression
    ``d sum_m p_m [mu_i I_1/2(a_i + 1, a_j) + mu_j I_1/2(a_j + 1, a_i)]``;
    ``"quad"`` integrates the pairwise exponent measure numerically.
    """
    if i == j:
        raise ValueError("chi needs two distinct sites")
    if method == "beta":
        a = psi.alphas
        mu = psi.centers
        terms = mu[:, i] * betainc(a[:, i] + 1.0, a[:, j], 0.5) + mu[:, j] * betainc(a[:, j] + 1.0, a[:, i], 0.5)
        chi = psi.dim * float(psi.weights @ terms)
    elif method == "quad":
        pair = marginal_pair(psi, i, j)
        chi = 2.0 - exponent_measure_region([1.0, 1.0], pair, method="quad").value
    else:
        raise ValueError(f"unknown method {method!r}")
    return min(max(chi, 0.0), 1.0)


def chi_matrix(psi: DMParams, method: str = "beta") -> dict[tuple[int, int], float]:
    return {(i, j): chi_coefficient(i, j, psi, method) for i, j in itertools.combinations(range(psi.dim), 2)}


def joint_return_period(T_marginal: float, chi: float) -> float:
    """Return period of a joint excess of two ``T``-year levels: ``T / chi``."""
    if not T_marginal > 0:
        raise ValueError("return period must be positive")
    if not 0 <= chi <= 1:
        raise ValueError("chi must lie in [0, 1]")
    if chi == 0:
        warnings.warn("chi = 0: asymptotically independent pair, joint return period is infinite", RuntimeWarning)
        return math.inf
    return T_marginal / chi


def independent_joint_return_period(T_marginal: float, mean_cluster_size: float, days_per_year: float = 365.0) -> float:
    """Joint return period under independence: ``T^2 * days_per_year / tau``."""
    if not T_marginal > 0 or not mean_cluster_size >= 1:
        raise ValueError("need T > 0 and mean cluster size >= 1")
    return T_marginal**2 * (days_per_year / mean_cluster_size)


def conditional_tail(i: int, j: int, x_i, u_j: float, psi: DMParams, method: str = "fast"):
    """``P(X_i > x_i | X_j > u_j)`` on the Frechet scale.

    ``[1/x_i + 1/u_j - V_ij(x_i, u_j)] * u_j`` with ``V_ij`` the exponent
    measure of the pair's union region.
    """
    pair = marginal_pair(psi, i, j)
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    U = np.column_stack([x_i, np.full_like(x_i, u_j)])
    if method == "fast":
        V = exponent_measure_many(U, pair)
    else:
        V = np.array([exponent_measure_region(row, pair, method=method).value for row in U])
    with np.errstate(divide="ignore"):
        inv = np.where(np.isinf(x_i), 0.0, 1.0 / x_i)
    p = (inv + 1.0 / u_j - V) * u_j
    return np.clip(p, 0.0, 1.0)

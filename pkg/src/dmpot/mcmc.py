"""Reversible-jump Metropolis-within-Gibbs sampler for margins and mixture.

Each iteration runs, in order: imputation of censored coordinates, random
walks on the marginal parameters, within-model mixture moves, and one
birth-or-death proposal on the number of components.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .angular import CENTER_FLOOR, ConstraintError, DMParams, chi_coefficient, dm_log_density_from_logs
from .diagnostics import (
    DiagnosticError,
    effective_sample_size,
    gelman_rubin,
    heidelberger_welch,
    lrt_regional_shape,
)
from .likelihood import (
    AugmentedState,
    ExtremeRegion,
    LikelihoodData,
    _block_terms,
    frechet_column,
    frechet_column_inverse,
    initial_augmentation,
    sample_conditional,
    total_log_likelihood,
    void_below_log_term,
)
from .margins import MarginalParams, frechet_arr, moment_start

__all__ = [
    "ChainError",
    "PriorSpec",
    "ChainConfig",
    "ChainState",
    "PosteriorSample",
    "DiagnosticsReport",
    "Sampler",
    "init_chain",
    "gibbs_impute",
    "update_margins",
    "update_mixture_within",
    "rj_move",
    "run_chains",
    "sample_prior",
    "feasibility_constant",
    "diagnose",
    "select_chains",
    "pool",
    "gelman_rubin",
    "heidelberger_welch",
    "lrt_regional_shape",
]

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.25
ADAPT_BATCH = 50


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters. ``log_scale_mean = None`` means "log sd of the exact excesses"."""

    shape_mean: float = 0.0
    shape_sd: float = 10.0
    log_scale_mean: tuple[float, ...] | None = None
    log_scale_sd: float = 10.0
    nu_shape: float = 1.0
    nu_rate: float = 0.01
    k_rate: float = 1.0
    k_max: int = 15
    weight_alpha: float = 1.0

    def __post_init__(self):
        for name in ("shape_sd", "log_scale_sd", "nu_shape", "nu_rate", "k_rate", "weight_alpha"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"prior hyperparameter {name} must be positive and finite, got {val}")
        if not math.isfinite(self.shape_mean):
            raise ValueError("shape_mean must be finite")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError("k_max must be a positive integer")
        if self.log_scale_mean is not None:
            object.__setattr__(self, "log_scale_mean", tuple(float(m) for m in self.log_scale_mean))

    def k_log_pmf(self, k: int) -> float:
        ks = np.arange(1, self.k_max + 1)
        logw = ks * math.log(self.k_rate) - gammaln(ks + 1)
        return float(logw[k - 1] - np.logaddexp.reduce(logw))

    def k_pmf(self) -> np.ndarray:
        return np.exp([self.k_log_pmf(k) for k in range(1, self.k_max + 1)])

    def resolved(self, data: LikelihoodData) -> PriorSpec:
        """Fill in data-dependent hyperparameters."""
        if self.log_scale_mean is not None:
            return self
        means = []
        for j in range(data.n_sites):
            z = data.exact_excesses(j)
            if z.size >= 2 and np.std(z, ddof=1) > 0:
                means.append(math.log(np.std(z, ddof=1)))
            elif z.size == 1:
                means.append(math.log(z[0]))
            else:
                warnings.warn(f"site {j}: fewer than one exact excess, log-scale prior centred at 0", RuntimeWarning)
                means.append(0.0)
        return PriorSpec(**{**self.__dict__, "log_scale_mean": tuple(means)})


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    iterations: int = 10_000
    burn_in: int | None = None
    thin: int = 10
    seed: int = 0
    regional: bool = False
    likelihood: bool = True
    checkpoints: int = 100
    workers: int = 1
    initial_nu: float | None = None
    feasibility_draws: int = 200_000

    def __post_init__(self):
        if self.n_chains < 1 or self.iterations < 1 or self.thin < 1:
            raise ValueError("chain count, iterations and thinning must be positive")
        b = self.burn_in_iterations
        if not 0 <= b < self.iterations:
            raise ValueError(f"burn-in {b} must lie in [0, iterations)")

    @property
    def burn_in_iterations(self) -> int:
        return int(0.2 * self.iterations) if self.burn_in is None else int(self.burn_in)


@dataclass
class ChainState:
    """Current parameters with their cached log-likelihood and log-prior parts."""

    margins: MarginalParams
    mixture: DMParams
    augmented: AugmentedState
    log_w: np.ndarray
    log_r: np.ndarray
    log_jac: np.ndarray
    log_dens: np.ndarray
    void_below: float
    block_terms: np.ndarray
    log_lik: float
    prior_margins: float
    prior_mixture: float
    iteration: int = 0

    @property
    def point_terms(self) -> np.ndarray:
        return self.log_dens + self.log_jac.sum(axis=1)

    def replace(self, **changes) -> ChainState:
        return dataclasses.replace(self, **changes)

    @property
    def log_prior(self) -> float:
        return self.prior_margins + self.prior_mixture

    @property
    def log_post(self) -> float:
        return self.log_lik + self.prior_margins + self.prior_mixture

    def dump(self) -> str:
        psi = self.mixture
        return json.dumps(
            {
                "iteration": self.iteration,
                "log_scales": self.margins.log_scales.tolist(),
                "shapes": self.margins.shapes.tolist(),
                "weights": psi.weights.tolist(),
                "centers": psi.centers.tolist(),
                "nu": psi.shapes.tolist(),
                "log_lik": self.log_lik,
                "log_prior": self.log_prior,
            }
        )


@dataclass
class PosteriorSample:
    chain: int
    seed: tuple
    site_names: tuple[str, ...]
    iterations: np.ndarray
    log_scales: np.ndarray
    shapes: np.ndarray
    mixtures: list[DMParams]
    log_lik: np.ndarray
    log_post: np.ndarray
    acceptance: dict[str, tuple[int, int]]
    regional: bool = False
    max_recheck_error: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.iterations.size

    @property
    def k(self) -> np.ndarray:
        return np.array([m.k for m in self.mixtures])

    def chi(self) -> dict[tuple[int, int], np.ndarray]:
        d = self.log_scales.shape[1]
        return {
            (i, j): np.array([chi_coefficient(i, j, m) for m in self.mixtures])
            for i in range(d)
            for j in range(i + 1, d)
        }

    def marginal_scalars(self) -> dict[str, np.ndarray]:
        out = {}
        for j, name in enumerate(self.site_names):
            out[f"sigma_{name}"] = np.exp(self.log_scales[:, j])
        if self.regional:
            out["xi"] = self.shapes[:, 0]
        else:
            for j, name in enumerate(self.site_names):
                out[f"xi_{name}"] = self.shapes[:, j]
        return out

    def scalars(self) -> dict[str, np.ndarray]:
        out = self.marginal_scalars()
        out["k"] = self.k.astype(float)
        for (i, j), v in self.chi().items():
            out[f"chi_{self.site_names[i]}_{self.site_names[j]}"] = v
        out["log_lik"] = self.log_lik
        return out

    def acceptance_rates(self) -> dict[str, float]:
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.acceptance.items()}

    def subset(self, idx) -> PosteriorSample:
        idx = np.asarray(idx, dtype=np.int64)
        return PosteriorSample(
            self.chain, self.seed, self.site_names, self.iterations[idx], self.log_scales[idx],
            self.shapes[idx], [self.mixtures[i] for i in idx], self.log_lik[idx], self.log_post[idx],
            self.acceptance, self.regional, self.max_recheck_error,
        )


def pool(samples: list[PosteriorSample]) -> PosteriorSample:
    """Concatenate chains into one sample (chain id of the first)."""
    if not samples:
        raise ValueError("nothing to pool")
    first = samples[0]
    acc: dict[str, list[int]] = {}
    for s in samples:
        for k, (a, n) in s.acceptance.items():
            acc.setdefault(k, [0, 0])
            acc[k][0] += a
            acc[k][1] += n
    return PosteriorSample(
        first.chain, first.seed, first.site_names,
        np.concatenate([s.iterations for s in samples]),
        np.vstack([s.log_scales for s in samples]),
        np.vstack([s.shapes for s in samples]),
        [m for s in samples for m in s.mixtures],
        np.concatenate([s.log_lik for s in samples]),
        np.concatenate([s.log_post for s in samples]),
        {k: (a, n) for k, (a, n) in acc.items()},
        first.regional,
        max(s.max_recheck_error for s in samples),
    )


# ---------------------------------------------------------------- prior pieces


def _feasible_last(p: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Vectorized solved last centres, shape ``(n, d)``; rows may be infeasible."""
    d = free.shape[-1]
    return (1.0 / d - np.einsum("nk,nkd->nd", p[:, :-1], free)) / p[:, -1:]


def _draw_mixture_prior(priors: PriorSpec, d: int, k: int, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unrestricted prior draws of ``(weights, free centres)`` and the feasibility mask."""
    p = rng.dirichlet(np.full(k, priors.weight_alpha), size=n)
    free = rng.dirichlet(np.ones(d), size=(n, k - 1))
    feasible = np.all(_feasible_last(p, free) > CENTER_FLOOR, axis=1)
    return p, free, feasible


@lru_cache(maxsize=256)
def _feasibility_constant_cached(d: int, k: int, alpha: float, draws: int, seed: int) -> float:
    if k == 1:
        return 1.0
    rng = np.random.default_rng([seed, d, k])
    hits = 0
    done = 0
    batch = 50_000
    while done < draws:
        m = min(batch, draws - done)
        hits += int(_draw_mixture_prior(PriorSpec(weight_alpha=alpha), d, k, m, rng)[2].sum())
        done += m
    if hits == 0:
        raise ChainError(f"no feasible mixture among {draws} prior draws for k={k}, d={d}")
    return hits / draws


def feasibility_constant(priors: PriorSpec, d: int, k: int, draws: int = 200_000, seed: int = 20240917) -> float:
    """Prior probability that ``k`` components admit a valid last centre.

    The free centres and weights have a prior restricted to this event; the
    constant normalizes it so that ``k`` keeps its truncated Poisson law.
    """
    return _feasibility_constant_cached(d, k, float(priors.weight_alpha), int(draws), int(seed))


def sample_prior(priors: PriorSpec, d: int, n: int, rng=None, regional: bool = False):
    """Independent exact draws from the joint prior by rejection.

    Returns ``(margins_list, mixtures)`` with ``log_scale_mean`` required.
    """
    if priors.log_scale_mean is None:
        raise ValueError("sample_prior needs explicit log-scale prior means")
    rng = np.random.default_rng(rng)
    ks = rng.choice(np.arange(1, priors.k_max + 1), size=n, p=priors.k_pmf())
    mixtures: list[DMParams | None] = [None] * n
    for k in np.unique(ks):
        idx = list(np.flatnonzero(ks == k))
        while idx:
            m = len(idx)
            nu = rng.gamma(priors.nu_shape, 1.0 / priors.nu_rate, size=(m, k))
            if k == 1:
                for i, s in zip(idx, nu):
                    mixtures[i] = DMParams.single(d, s[0])
                idx = []
                continue
            p, free, ok = _draw_mixture_prior(priors, d, int(k), m, rng)
            rest = []
            for r, i in enumerate(idx):
                if not ok[r]:
                    rest.append(i)
                    continue
                try:
                    mixtures[i] = DMParams.from_free(p[r], free[r], nu[r])
                except ConstraintError:
                    rest.append(i)
            idx = rest
    mu = np.asarray(priors.log_scale_mean)
    margins = []
    for _ in range(n):
        ls = rng.normal(mu, priors.log_scale_sd)
        if regional:
            xi = np.full(d, rng.normal(priors.shape_mean, priors.shape_sd))
        else:
            xi = rng.normal(priors.shape_mean, priors.shape_sd, size=d)
        margins.append(MarginalParams(ls, xi, regional))
    return margins, mixtures


def _normal_logpdf(x, m, s):
    return -0.5 * ((x - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)


# ---------------------------------------------------------------- sampler


@dataclass
class _Walker:
    step: float
    accepted: int = 0
    proposed: int = 0
    batch_accepted: int = 0
    batch_proposed: int = 0
    batches: int = 0

    def record(self, ok: bool) -> None:
        self.proposed += 1
        self.batch_proposed += 1
        if ok:
            self.accepted += 1
            self.batch_accepted += 1

    def adapt(self) -> None:
        if self.batch_proposed == 0:
            return
        self.batches += 1
        delta = min(1.0, 2.0 / math.sqrt(self.batches))
        rate = self.batch_accepted / self.batch_proposed
        self.step *= math.exp(delta if rate > TARGET_ACCEPT else -delta)
        self.batch_accepted = self.batch_proposed = 0


class Sampler:
    """Holds the data, priors and per-chain adaptive proposal scales."""

    def __init__(self, data: LikelihoodData, priors: PriorSpec, config: ChainConfig):
        self.data = data
        self.config = config
        self.priors = priors.resolved(data)
        if len(self.priors.log_scale_mean) != data.n_sites:
            raise ValueError("log-scale prior means do not match the number of sites")
        self.d = data.n_sites
        self.regional = config.regional
        self.region = ExtremeRegion(data.u, method="fast")
        self.imputable = data.imputed
        self.state_hook = None
        self._ex = data.exact_above
        self._ex_rows = [np.flatnonzero(self._ex[:, j]) for j in range(data.n_sites)]
        self._imp_rows = [np.flatnonzero(self.imputable[:, j]) for j in range(data.n_sites)]
        self._ex_y = [data.value[self._ex_rows[j], j] for j in range(data.n_sites)]
        self._v = data.thresholds
        self._u = data.u
        self._zeta = data.rates.zetas
        self._log_d = math.log(data.n_sites)
        # imputation bounds: constant entries once, margin-dependent entries per column
        v, u = data.thresholds, data.u
        imp = self.imputable
        self._lo0 = np.zeros(imp.shape)
        self._hi0 = np.where(np.isinf(data.upper), np.inf, u)
        lo_var = imp & (data.lower >= v)
        hi_var = imp & np.isfinite(data.upper) & (data.upper > v)
        self._lo_var = [(np.flatnonzero(lo_var[:, j]), data.lower[lo_var[:, j], j]) for j in range(self.d)]
        self._hi_var = [(np.flatnonzero(hi_var[:, j]), data.upper[hi_var[:, j], j]) for j in range(self.d)]
        # bounds depend on the margins only through finite bounds above threshold
        self._block_sites = (
            np.isfinite(data.block_bounds) & (data.block_bounds > data.thresholds)
        ).any(axis=0) if data.block_bounds.size else np.zeros(self.d, dtype=bool)
        self.log_ck = np.array(
            [
                math.log(feasibility_constant(self.priors, self.d, k, config.feasibility_draws))
                for k in range(1, self.priors.k_max + 1)
            ]
        )
        pr = self.priors
        self._k_log_pmf = [pr.k_log_pmf(k) for k in range(1, pr.k_max + 1)]
        self._nu_const = pr.nu_shape * math.log(pr.nu_rate) - gammaln(pr.nu_shape)
        ks = np.arange(1, pr.k_max + 1)
        self._weight_const = (gammaln(ks * pr.weight_alpha) - ks * gammaln(pr.weight_alpha)).tolist()
        self._center_const = float(gammaln(self.d))
        d = self.d
        self.walkers: dict[str, _Walker] = {}
        for j in range(d):
            self.walkers[f"log_scale_{j}"] = _Walker(0.1)
        if self.regional:
            self.walkers["shape"] = _Walker(0.05)
        else:
            for j in range(d):
                self.walkers[f"shape_{j}"] = _Walker(0.05)
        self.walkers["weight"] = _Walker(0.5)
        self.walkers["center"] = _Walker(0.3)
        self.walkers["nu"] = _Walker(0.5)
        self.rj_counts = {"birth": [0, 0], "death": [0, 0]}
        self.gibbs_draws = 0

    # --- log densities

    def log_prior_margins(self, margins: MarginalParams) -> float:
        pr = self.priors
        lp = 0.0
        for x, m in zip(margins.log_scales, pr.log_scale_mean):
            lp += self._norm(x, m, pr.log_scale_sd)
        for x in margins.shapes[:1] if self.regional else margins.shapes:
            lp += self._norm(x, pr.shape_mean, pr.shape_sd)
        return lp

    @staticmethod
    def _norm(x, m, s) -> float:
        z = (x - m) / s
        return -0.5 * z * z - math.log(s) - 0.9189385332046727

    def log_prior(self, margins: MarginalParams, psi: DMParams) -> float:
        return self.log_prior_margins(margins) + self.log_prior_mixture(psi)

    # --- cached likelihood pieces

    def _geometry(self, x: np.ndarray):
        """``log w`` and ``log r`` of the cluster points."""
        r = x.sum(axis=1)
        log_r = np.log(r)
        return np.log(x) - log_r[:, None], log_r

    def _log_dens(self, log_w, log_r, psi: DMParams) -> np.ndarray:
        if log_w.shape[0] == 0:
            return np.zeros(0)
        return self._log_d + dm_log_density_from_logs(log_w, psi) - (self.d + 1) * log_r

    def _exact_columns(self, margins: MarginalParams):
        """Frechet values and log Jacobians of all exact excesses, or ``None`` off-support."""
        x = np.zeros(self.data.kind.shape)
        lj = np.zeros(self.data.kind.shape)
        for j in range(self.d):
            out = self._exact_column(j, margins)
            if out is None:
                return None
            x[self._ex_rows[j], j], lj[self._ex_rows[j], j] = out
        return x, lj

    def _exact_column(self, j: int, margins: MarginalParams):
        return frechet_column(self._ex_y[j], self._v[j], float(margins.scales[j]), float(margins.shapes[j]),
                              self._zeta[j])

    def _ll(self, log_dens, log_jac_sum, void_below, blocks) -> float:
        return float(log_dens.sum() + log_jac_sum + void_below + blocks.sum())

    def new_state(self, margins, psi, aug) -> ChainState:
        pr_m, pr_p = self.log_prior_margins(margins), self.log_prior_mixture(psi)
        n, d = self.data.kind.shape
        if not self.config.likelihood:
            z = np.zeros((0, d))
            return ChainState(margins, psi, aug, z, np.zeros(0), z, np.zeros(0), 0.0, np.zeros(0), 0.0, pr_m, pr_p)
        ex = self._exact_columns(margins)
        if ex is None:
            x, lj = aug.x, np.full(aug.x.shape, -np.inf)
        else:
            x = np.where(self._ex, ex[0], aug.x)
            lj = ex[1]
        aug = AugmentedState(x, self.imputable)
        log_w, log_r = self._geometry(x)
        dens = self._log_dens(log_w, log_r, psi)
        below = void_below_log_term(self.data.below_days, self.data.tau, self.region, psi)
        blocks = _block_terms(self.data, margins, psi)
        ll = self._ll(dens, lj.sum(), below, blocks)
        return ChainState(margins, psi, aug, log_w, log_r, lj, dens, below, blocks, ll, pr_m, pr_p)

    def recompute_log_post(self, state: ChainState) -> float:
        if not self.config.likelihood:
            return self.log_prior(state.margins, state.mixture)
        terms = total_log_likelihood(self.data, state.augmented, state.margins, state.mixture)
        return terms.total + self.log_prior(state.margins, state.mixture)

    # --- moves

    def _moved(self, state: ChainState) -> ChainState:
        """Report every newly accepted state to the optional hook."""
        if self.state_hook is not None:
            self.state_hook(state)
        return state

    def _imputation_bounds(self, margins: MarginalParams):
        lo, hi = self._lo0.copy(), self._hi0.copy()
        sig, xi = margins.scales, margins.shapes
        for j in range(self.d):
            for target, (rows, y) in ((lo, self._lo_var[j]), (hi, self._hi_var[j])):
                if rows.size:
                    with np.errstate(invalid="ignore"):
                        target[rows, j] = frechet_arr(y, self._v[j], sig[j], xi[j], self._zeta[j])
        return lo, hi

    def gibbs_impute(self, state: ChainState, rng) -> ChainState:
        if not self.config.likelihood or not self.imputable.any():
            return state
        lo, hi = self._imputation_bounds(state.margins)
        x = state.augmented.x.copy()
        for j in range(self.d):
            rows = self.imputable[:, j] & (hi[:, j] > lo[:, j])
            pinned = self.imputable[:, j] & ~(hi[:, j] > lo[:, j])
            x[pinned, j] = lo[pinned, j]
            if rows.any():
                x[rows, j] = sample_conditional(x[rows], j, lo[rows, j], hi[rows, j], state.mixture, rng)
                self.gibbs_draws += int(rows.sum())
        log_w, log_r = self._geometry(x)
        dens = self._log_dens(log_w, log_r, state.mixture)
        ll = self._ll(dens, state.log_jac.sum(), state.void_below, state.block_terms)
        return self._moved(state.replace(augmented=AugmentedState(x, self.imputable), log_w=log_w, log_r=log_r,
                                         log_dens=dens, log_lik=ll))

    def _try_margins(self, state: ChainState, new: MarginalParams, cols, rng, walker: _Walker) -> ChainState:
        """Metropolis step for new margins differing from the current ones at sites ``cols``."""
        lp_new = self.log_prior_margins(new)
        if not self.config.likelihood:
            log_a = lp_new - state.prior_margins
            if log_a == log_a and math.log(rng.random()) < log_a:
                walker.record(True)
                return self._moved(state.replace(margins=new, prior_margins=lp_new))
            walker.record(False)
            return state
        old = state.margins
        x = state.augmented.x.copy()
        lj = state.log_jac.copy()
        rows = np.zeros(x.shape[0], dtype=bool)
        log_jac_move = 0.0
        for j in cols:
            out = self._exact_column(j, new)
            if out is None:
                walker.record(False)
                return state
            ex_rows = self._ex_rows[j]
            x[ex_rows, j], lj[ex_rows, j] = out
            rows[ex_rows] = True
            # imputed excesses keep their data-scale value
            mv = self._imp_rows[j][x[self._imp_rows[j], j] > self._u[j]]
            if mv.size:
                y = frechet_column_inverse(x[mv, j], self._v[j], float(old.scales[j]), float(old.shapes[j]),
                                           self._zeta[j])
                fwd = frechet_column(y, self._v[j], float(new.scales[j]), float(new.shapes[j]), self._zeta[j])
                back = frechet_column(y, self._v[j], float(old.scales[j]), float(old.shapes[j]), self._zeta[j])
                if fwd is None or back is None:
                    walker.record(False)
                    return state
                x[mv, j] = fwd[0]
                log_jac_move += float(np.sum(fwd[1] - back[1]))
                rows[mv] = True
        log_w, log_r, dens = state.log_w, state.log_r, state.log_dens
        if rows.any():
            log_w, log_r, dens = log_w.copy(), log_r.copy(), dens.copy()
            lw, lr = self._geometry(x[rows])
            log_w[rows], log_r[rows] = lw, lr
            dens[rows] = self._log_dens(lw, lr, state.mixture)
        if self._block_sites[list(cols)].any():
            blocks = _block_terms(self.data, new, state.mixture)
        else:
            blocks = state.block_terms
        ll_new = self._ll(dens, lj.sum(), state.void_below, blocks)
        log_a = ll_new - state.log_lik + lp_new - state.prior_margins + log_jac_move
        if log_a == log_a and math.log(rng.random()) < log_a:
            walker.record(True)
            return self._moved(state.replace(margins=new, augmented=AugmentedState(x, self.imputable), log_w=log_w,
                                             log_r=log_r, log_jac=lj, log_dens=dens, block_terms=blocks,
                                             log_lik=ll_new, prior_margins=lp_new))
        walker.record(False)
        return state

    def update_margins(self, state: ChainState, rng) -> ChainState:
        d = self.d
        for j in range(d):
            w = self.walkers[f"log_scale_{j}"]
            ls = state.margins.log_scales.copy()
            ls[j] += w.step * rng.standard_normal()
            state = self._try_margins(state, MarginalParams(ls, state.margins.shapes, self.regional), (j,), rng, w)
        if self.regional:
            w = self.walkers["shape"]
            xi = np.full(d, state.margins.shapes[0] + w.step * rng.standard_normal())
            state = self._try_margins(state, MarginalParams(state.margins.log_scales, xi, True), range(d), rng, w)
        else:
            for j in range(d):
                w = self.walkers[f"shape_{j}"]
                xi = state.margins.shapes.copy()
                xi[j] += w.step * rng.standard_normal()
                state = self._try_margins(state, MarginalParams(state.margins.log_scales, xi), (j,), rng, w)
        return state

    def _accept_mixture(self, state: ChainState, psi: DMParams, log_extra: float, rng):
        """Metropolis step for a mixture proposal; returns ``(state, accepted)``."""
        lp_new = self.log_prior_mixture(psi)
        if self.config.likelihood:
            dens = self._log_dens(state.log_w, state.log_r, psi)
            below = void_below_log_term(self.data.below_days, self.data.tau, self.region, psi)
            blocks = _block_terms(self.data, state.margins, psi)
            ll_new = self._ll(dens, state.log_jac.sum(), below, blocks)
        else:
            dens, below, blocks, ll_new = state.log_dens, 0.0, state.block_terms, 0.0
        log_a = ll_new - state.log_lik + lp_new - state.prior_mixture + log_extra
        if log_a == log_a and math.log(rng.random()) < log_a:
            new = state.replace(mixture=psi, log_dens=dens, void_below=below, block_terms=blocks, log_lik=ll_new,
                                prior_mixture=lp_new)
            return self._moved(new), True
        return state, False

    def update_mixture_within(self, state: ChainState, rng) -> ChainState:
        psi = state.mixture
        k, d = psi.k, self.d
        if k >= 2:
            # reallocate mass between two components on the logit scale
            w = self.walkers["weight"]
            i, j = rng.choice(k, size=2, replace=False)
            s = psi.weights[i] + psi.weights[j]
            q = psi.weights[i] / s
            eta = math.log(q / (1.0 - q)) + w.step * rng.standard_normal()
            q_new = 1.0 / (1.0 + math.exp(-eta))
            p = psi.weights.copy()
            p[i], p[j] = s * q_new, s * (1.0 - q_new)
            try:
                prop = DMParams.from_free(p, psi.centers[:-1], psi.shapes)
                log_jac = math.log(q_new * (1.0 - q_new)) - math.log(q * (1.0 - q))
                state, ok = self._accept_mixture(state, prop, log_jac, rng)
            except (ConstraintError, ValueError):
                ok = False
            w.record(ok)
            psi = state.mixture

            # additive-logratio walk on one free centre
            w = self.walkers["center"]
            m = rng.integers(k - 1)
            mu = psi.centers[m]
            eta = np.log(mu[:-1] / mu[-1]) + w.step * rng.standard_normal(d - 1)
            e = np.exp(np.append(eta - eta.max(), -eta.max()))
            mu_new = e / e.sum()
            free = psi.centers[:-1].copy()
            free[m] = mu_new
            try:
                prop = DMParams.from_free(psi.weights, free, psi.shapes)
                log_jac = float(np.log(mu_new).sum() - np.log(mu).sum())
                state, ok = self._accept_mixture(state, prop, log_jac, rng)
            except (ConstraintError, ValueError):
                ok = False
            w.record(ok)
            psi = state.mixture

        w = self.walkers["nu"]
        m = rng.integers(k)
        nu = psi.shapes.copy()
        step = w.step * rng.standard_normal()
        nu[m] *= math.exp(step)
        try:
            prop = DMParams(psi.weights, psi.centers, nu)
            state, ok = self._accept_mixture(state, prop, step, rng)
        except (ConstraintError, ValueError):
            ok = False
        w.record(ok)
        return state

    def birth_log_ratio(self, k: int, p_star: float, nu_star: float) -> float:
        """Proposal and Jacobian part of the log acceptance ratio of a birth from ``k``.

        Birth draws ``p* ~ Beta(1, k)`` and a centre and shape from their
        priors, then rescales the old weights by ``1 - p*`` (Jacobian
        ``(1 - p*)^(k - 1)``). The slot of the new component is uniform among
        the ``k`` free positions, matching the uniform choice of the reverse
        death, so those factors cancel. A death uses the negative of the
        birth value at the reverse move.
        """
        pr = self.priors
        lq = gammaln(self.d)
        lq += pr.nu_shape * math.log(pr.nu_rate) - gammaln(pr.nu_shape)
        lq += (pr.nu_shape - 1.0) * math.log(nu_star) - pr.nu_rate * nu_star
        # Beta(1, k) log density
        lq += math.log(k) + (k - 1) * math.log1p(-p_star)
        return (k - 1) * math.log1p(-p_star) - lq

    def log_prior_mixture(self, psi: DMParams) -> float:
        pr = self.priors
        k = psi.k
        lp = self._k_log_pmf[k - 1] + self._nu_const * k
        lp += (pr.nu_shape - 1.0) * float(np.log(psi.shapes).sum()) - pr.nu_rate * float(psi.shapes.sum())
        if k > 1:
            a = pr.weight_alpha
            lp += self._weight_const[k - 1]
            if a != 1.0:
                lp += (a - 1.0) * float(np.log(psi.weights).sum())
            lp += (k - 1) * self._center_const - self.log_ck[k - 1]
        return lp

    def _birth(self, psi: DMParams, rng):
        k = psi.k
        p_star = rng.beta(1.0, k)
        mu_star = rng.dirichlet(np.ones(self.d))
        nu_star = rng.gamma(self.priors.nu_shape, 1.0 / self.priors.nu_rate)
        slot = rng.integers(k)
        self._last_nu = nu_star
        p = np.insert(psi.weights[:-1] * (1.0 - p_star), slot, p_star)
        p = np.append(p, psi.weights[-1] * (1.0 - p_star))
        free = np.insert(psi.centers[:-1], slot, mu_star, axis=0)
        nu = np.insert(psi.shapes[:-1], slot, nu_star)
        nu = np.append(nu, psi.shapes[-1])
        return DMParams.from_free(p, free, nu), p_star

    def _death(self, psi: DMParams, rng):
        k = psi.k
        slot = rng.integers(k - 1)
        p_star = psi.weights[slot]
        self._last_nu = psi.shapes[slot]
        p = np.delete(psi.weights, slot) / (1.0 - p_star)
        free = np.delete(psi.centers[:-1], slot, axis=0)
        nu = np.delete(psi.shapes, slot)
        if k - 1 == 1:
            return DMParams.single(self.d, nu[0]), p_star
        return DMParams.from_free(p, free, nu), p_star

    def rj_move(self, state: ChainState, rng) -> ChainState:
        psi = state.mixture
        birth = rng.random() < 0.5
        kind = "birth" if birth else "death"
        if (birth and psi.k >= self.priors.k_max) or (not birth and psi.k <= 1):
            return state
        self.rj_counts[kind][1] += 1
        try:
            if birth:
                prop, p_star = self._birth(psi, rng)
                extra = self.birth_log_ratio(psi.k, p_star, self._last_nu)
            else:
                prop, p_star = self._death(psi, rng)
                extra = -self.birth_log_ratio(prop.k, p_star, self._last_nu)
        except (ConstraintError, ValueError):
            return state
        state, ok = self._accept_mixture(state, prop, extra, rng)
        if ok:
            self.rj_counts[kind][0] += 1
        return state

    def adapt(self) -> None:
        for w in self.walkers.values():
            w.adapt()

    def acceptance(self) -> dict[str, tuple[int, int]]:
        out = {k: (w.accepted, w.proposed) for k, w in self.walkers.items()}
        out.update({k: (a, n) for k, (a, n) in self.rj_counts.items()})
        return out

    # --- driver

    def init_chain(self, rng) -> ChainState:
        d = self.d
        data = self.data
        ls = np.empty(d)
        xi = np.empty(d)
        for j in range(d):
            z = data.exact_excesses(j)
            if z.size == 0:
                warnings.warn(f"site {j} has no exact excess: starting at the prior mean", RuntimeWarning)
                ls[j], xi[j] = self.priors.log_scale_mean[j], self.priors.shape_mean
            else:
                ls[j], xi[j] = moment_start(z)
        if self.regional:
            xi[:] = xi.mean()
        margins = MarginalParams(ls, xi, self.regional)
        nu = self.config.initial_nu or float(d)
        psi = DMParams.single(d, nu)
        aug = initial_augmentation(data, margins)
        state = self.new_state(margins, psi, aug)
        if not np.isfinite(state.log_post):
            # the moment start can leave an excess outside the support
            means = [np.mean(data.exact_excesses(j)) if data.exact_excesses(j).size else 1.0 for j in range(d)]
            margins = MarginalParams(np.log(means), np.zeros(d), self.regional)
            aug = initial_augmentation(data, margins)
            state = self.new_state(margins, psi, aug)
        if not np.isfinite(state.log_post):
            raise ChainError(f"non-finite log posterior at the initial state: {state.dump()}")
        return state

    def step(self, state: ChainState, rng) -> ChainState:
        state = self.gibbs_impute(state, rng)
        state = self.update_margins(state, rng)
        # a single site has a degenerate angular measure: nothing to learn
        if self.d > 1:
            state = self.update_mixture_within(state, rng)
            state = self.rj_move(state, rng)
        state.iteration += 1
        return state

    def run(self, chain: int, seed_seq: np.random.SeedSequence, state_hook=None) -> PosteriorSample:
        cfg = self.config
        rng = np.random.default_rng(seed_seq)
        check_rng = np.random.default_rng(seed_seq.spawn(1)[0])
        burn = cfg.burn_in_iterations
        n_keep = (cfg.iterations - burn) // cfg.thin
        checks = set(check_rng.choice(np.arange(1, cfg.iterations + 1), size=min(cfg.checkpoints, cfg.iterations),
                                      replace=False).tolist())
        state = self.init_chain(rng)
        self.state_hook = state_hook
        d = self.d
        iters = np.empty(n_keep, dtype=np.int64)
        ls = np.empty((n_keep, d))
        xi = np.empty((n_keep, d))
        ll = np.empty(n_keep)
        lpost = np.empty(n_keep)
        mixtures: list[DMParams] = []
        worst = 0.0
        kept = 0
        for t in range(1, cfg.iterations + 1):
            state = self.step(state, rng)
            if not np.isfinite(state.log_post):
                raise ChainError(f"chain {chain}: non-finite log posterior, state {state.dump()}")
            if t <= burn and t % ADAPT_BATCH == 0:
                self.adapt()
            if t in checks:
                fresh = self.recompute_log_post(state)
                err = abs(fresh - state.log_post)
                worst = max(worst, err)
                if err > 1e-8 * max(1.0, abs(fresh)):
                    raise ChainError(f"chain {chain}: cached log posterior drifted by {err} at iteration {t}")
            if t > burn and (t - burn) % cfg.thin == 0 and kept < n_keep:
                iters[kept] = t
                ls[kept] = state.margins.log_scales
                xi[kept] = state.margins.shapes
                ll[kept] = state.log_lik
                lpost[kept] = state.log_post
                mixtures.append(state.mixture)
                kept += 1
        for name, w in self.walkers.items():
            if w.step == 0:
                warnings.warn(f"walker {name} has a zero proposal scale", RuntimeWarning)
        names = self.data.site_names or tuple(f"s{j + 1}" for j in range(d))
        return PosteriorSample(
            chain, (cfg.seed, *seed_seq.spawn_key), names, iters, ls, xi, mixtures, ll, lpost, self.acceptance(),
            self.regional, worst,
        )


def _chain_seeds(config: ChainConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(config.seed).spawn(config.n_chains)


def _run_one(args) -> PosteriorSample:
    data, priors, config, chain, seq = args
    return Sampler(data, priors, config).run(chain, seq)


def run_chains(data: LikelihoodData, priors: PriorSpec, config: ChainConfig, state_hook=None) -> list[PosteriorSample]:
    """Run independent chains with seeds spawned from ``config.seed``."""
    seqs = _chain_seeds(config)
    if config.workers > 1 and state_hook is None:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            return list(ex.map(_run_one, [(data, priors, config, c, s) for c, s in enumerate(seqs)]))
    return [Sampler(data, priors, config).run(c, s, state_hook) for c, s in enumerate(seqs)]


# module-level wrappers following the per-move interface


def init_chain(data: LikelihoodData, priors: PriorSpec, config: ChainConfig, seed) -> tuple[Sampler, ChainState]:
    sampler = Sampler(data, priors, config)
    return sampler, sampler.init_chain(np.random.default_rng(seed))


def gibbs_impute(sampler: Sampler, state: ChainState, rng) -> ChainState:
    return sampler.gibbs_impute(state, rng)


def update_margins(sampler: Sampler, state: ChainState, rng) -> ChainState:
    return sampler.update_margins(state, rng)


def update_mixture_within(sampler: Sampler, state: ChainState, rng) -> ChainState:
    return sampler.update_mixture_within(state, rng)


def rj_move(sampler: Sampler, state: ChainState, rng) -> ChainState:
    return sampler.rj_move(state, rng)


# ---------------------------------------------------------------- diagnostics


@dataclass
class DiagnosticsReport:
    rhat: dict[str, float] = field(default_factory=dict)
    stationarity: dict[str, list[bool]] = field(default_factory=dict)
    usable_start: dict[str, list[int]] = field(default_factory=dict)
    ess: dict[str, float] = field(default_factory=dict)
    passing_chains: list[int] = field(default_factory=list)
    acceptance: dict[str, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "rhat": self.rhat,
            "stationarity": self.stationarity,
            "usable_start": self.usable_start,
            "ess": self.ess,
            "passing_chains": self.passing_chains,
            "acceptance": self.acceptance,
        }


def diagnose(samples: list[PosteriorSample], rhat_max: float = 1.1) -> DiagnosticsReport:
    """R-hat across chains, per-chain stationarity and pooled ESS for every scalar."""
    rep = DiagnosticsReport()
    per_chain = [s.scalars() for s in samples]
    names = list(per_chain[0])
    n = min(s.n_draws for s in samples)
    for name in names:
        draws = np.array([pc[name][:n] for pc in per_chain])
        if len(samples) >= 2 and n >= 10:
            try:
                rep.rhat[name] = gelman_rubin(draws)
            except DiagnosticError:
                rep.rhat[name] = float("nan")
        hw = []
        for row in draws:
            if n >= 100:
                try:
                    hw.append(heidelberger_welch(row))
                except DiagnosticError:
                    hw.append(None)
            else:
                hw.append(None)
        rep.stationarity[name] = [bool(h.passed) if h else False for h in hw]
        rep.usable_start[name] = [int(h.start) if h else -1 for h in hw]
        pooled = draws.ravel()
        rep.ess[name] = effective_sample_size(pooled) if pooled.size > 10 and np.ptp(pooled) > 0 else float("nan")
    marg = list(samples[0].marginal_scalars())
    for c, s in enumerate(samples):
        if all(rep.stationarity[m][c] for m in marg):
            rep.passing_chains.append(s.chain)
        rep.acceptance[str(s.chain)] = s.acceptance_rates()
    return rep


def select_chains(samples: list[PosteriorSample], report: DiagnosticsReport, rule: str = "pooled") -> list[PosteriorSample]:
    """Pool chains passing the stationarity test, or keep the single best one.

    ``"best"`` keeps the chain with the most stationary scalars (ties broken by
    chain order). When no chain passes, all chains are pooled with a warning.
    """
    if rule == "best":
        scores = [sum(report.stationarity[name][c] for name in report.stationarity) for c in range(len(samples))]
        return [samples[int(np.argmax(scores))]]
    if rule != "pooled":
        raise ValueError(f"unknown selection rule {rule!r}")
    keep = [s for s in samples if s.chain in report.passing_chains]
    if not keep:
        warnings.warn("no chain passes the stationarity test: pooling all chains", RuntimeWarning)
        keep = list(samples)
    return keep

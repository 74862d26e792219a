import math

import numpy as np
import pytest
from helpers import simulated_data, toy_config
from scipy import stats

from dmpot.angular import MOMENT_TOL, DMParams, pair_angular_density
from dmpot.likelihood import AugmentedState, LikelihoodData
from dmpot.margins import ExceedanceRates, MarginalParams
from dmpot.mcmc import (
    ChainConfig,
    PriorSpec,
    Sampler,
    diagnose,
    feasibility_constant,
    init_chain,
    pool,
    run_chains,
    select_chains,
)
from dmpot.simulate import SimConfig


@pytest.fixture(scope="module")
def censored_data():
    data, _, _ = simulated_data(toy_config(n_days=20_000, seed=5, historical_days=10_000))
    return data


def quick(**kw):
    base = dict(n_chains=1, iterations=300, thin=1, seed=3, feasibility_draws=20_000)
    return ChainConfig(**{**base, **kw})


def test_initial_state(censored_data):
    s1, st1 = init_chain(censored_data, PriorSpec(), quick(), seed=9)
    _, st2 = init_chain(censored_data, PriorSpec(), quick(), seed=9)
    assert st1.mixture.k == 1
    np.testing.assert_allclose(st1.mixture.centers[0], 0.5)
    assert np.isfinite(st1.log_post)
    assert st1.log_post == st2.log_post
    assert np.array_equal(st1.augmented.x, st2.augmented.x)
    assert st1.log_post == pytest.approx(s1.recompute_log_post(st1), rel=1e-10)


def test_degenerate_interval_is_imputed_at_its_value():
    inf = math.inf
    rates = ExceedanceRates([0.005, 0.005])
    kind = np.array([[1, 3], [1, 1]], dtype=np.int8)
    value = np.array([[180.0, np.nan], [130.0, 200.0]])
    lower = np.array([[0.0, 200.0], [0.0, 0.0]])
    upper = np.array([[inf, 200.0], [inf, inf]])
    data = LikelihoodData(kind, value, lower, upper, np.zeros(0), np.zeros((0, 2)), 0, 1.0,
                          np.array([100.0, 150.0]), rates)
    sampler, state = init_chain(data, PriorSpec(), quick(), seed=0)
    lo, _ = data.frechet_bounds(state.margins)
    rng = np.random.default_rng(1)
    for _ in range(5):
        state = sampler.gibbs_impute(state, rng)
        assert state.augmented.x[0, 1] == lo[0, 1]


def test_wider_intervals_give_more_spread(censored_data):
    sampler, state = init_chain(censored_data, PriorSpec(), quick(), seed=0)
    rng = np.random.default_rng(2)
    imp = censored_data.imputed
    draws = []
    for _ in range(300):
        state = sampler.gibbs_impute(state, rng)
        draws.append(state.augmented.x)
    draws = np.array(draws)
    lo, hi = censored_data.frechet_bounds(state.margins)
    width = np.where(imp & np.isfinite(hi), hi - lo, np.nan)
    spread = np.where(imp & np.isfinite(hi), draws.std(axis=0), np.nan)
    keep = np.isfinite(width) & (width > 0)
    assert stats.spearmanr(width[keep], spread[keep]).statistic > 0.5


def test_support_violation_is_rejected(censored_data):
    sampler, state = init_chain(censored_data, PriorSpec(), quick(), seed=0)
    excess = censored_data.exact_excesses(0).max()
    bad = state.margins.shapes.copy()
    bad[0] = -1.1 * state.margins.scales[0] / excess
    new = MarginalParams(state.margins.log_scales, bad)
    walker = sampler.walkers["shape_0"]
    out = sampler._try_margins(state, new, (0,), np.random.default_rng(0), walker)
    assert out is state
    assert walker.proposed == 1 and walker.accepted == 0


def test_zero_scale_walker_sticks_and_warns(censored_data):
    sampler = Sampler(censored_data, PriorSpec(), quick(iterations=100))
    sampler.walkers["log_scale_1"].step = 0.0
    with pytest.warns(RuntimeWarning, match="zero proposal scale"):
        out = sampler.run(0, np.random.SeedSequence(1))
    assert out.acceptance_rates()["log_scale_1"] == 1.0
    assert np.ptp(out.log_scales[:, 1]) == 0.0


def test_single_component_moves_only_nu(censored_data):
    sampler, state = init_chain(censored_data, PriorSpec(k_max=1), quick(), seed=0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = sampler.update_mixture_within(state, rng)
        state = sampler.rj_move(state, rng)
    acc = sampler.acceptance()
    assert acc["weight"][1] == 0 and acc["center"][1] == 0 and acc["nu"][1] == 50
    assert acc["birth"][1] == 0 and acc["death"][1] == 0


def test_death_unavailable_at_one_component(censored_data):
    sampler, state = init_chain(censored_data, PriorSpec(), quick(), seed=0)
    rng = np.random.default_rng(0)
    for _ in range(40):
        sampler.rj_move(state, rng)
    assert sampler.acceptance()["death"][1] == 0


def test_birth_death_ratios_cancel_and_match_hand_value(censored_data):
    pr = PriorSpec(nu_shape=2.0, nu_rate=0.05, k_rate=1.3)
    sampler = Sampler(censored_data, pr, quick())
    d, k, p_star, nu_star = 2, 2, 0.3, 7.5
    hand = (k - 1) * math.log(1 - p_star) - (
        math.log(math.gamma(d))
        + stats.gamma(pr.nu_shape, scale=1 / pr.nu_rate).logpdf(nu_star)
        + stats.beta(1, k).logpdf(p_star)
    )
    assert sampler.birth_log_ratio(k, p_star, nu_star) == pytest.approx(hand, rel=1e-12)

    small = DMParams.from_free([0.45, 0.55], [[0.4, 0.6]], [4.0, 6.0])
    big = DMParams.from_free(
        np.array([p_star, 0.45 * (1 - p_star), 0.55 * (1 - p_star)]), [[0.2, 0.8], [0.4, 0.6]], [nu_star, 4.0, 6.0]
    )
    log_birth = sampler.log_prior_mixture(big) - sampler.log_prior_mixture(small) + sampler.birth_log_ratio(
        k, p_star, nu_star
    )
    log_death = sampler.log_prior_mixture(small) - sampler.log_prior_mixture(big) - sampler.birth_log_ratio(
        k, p_star, nu_star
    )
    assert math.exp(log_birth) * math.exp(log_death) == pytest.approx(1.0, rel=1e-12)


def test_feasibility_constant_is_a_probability():
    pr = PriorSpec()
    assert feasibility_constant(pr, 3, 1) == 1.0
    c = feasibility_constant(pr, 3, 2, draws=50_000)
    assert 0 < c < 1
    assert feasibility_constant(pr, 3, 2, draws=50_000) == c


def test_same_seed_bit_identical(censored_data):
    a = run_chains(censored_data, PriorSpec(), quick(n_chains=2))
    b = run_chains(censored_data, PriorSpec(), quick(n_chains=2))
    for x, y in zip(a, b):
        assert np.array_equal(x.log_scales, y.log_scales) and np.array_equal(x.log_post, y.log_post)
        assert all(np.array_equal(m.weights, n.weights) for m, n in zip(x.mixtures, y.mixtures))
    assert not np.array_equal(a[0].log_post, a[1].log_post)


def test_chain_count_and_constraints(censored_data):
    out = run_chains(censored_data, PriorSpec(), quick(n_chains=6, iterations=60))
    assert len(out) == 6
    for s in out:
        assert s.max_recheck_error < 1e-6
        for m in s.mixtures:
            assert np.abs(m.weights @ m.centers - 0.5).max() <= MOMENT_TOL
            assert abs(m.weights.sum() - 1) <= 1e-12


def test_regional_run_shares_the_shape(censored_data):
    (s,) = run_chains(censored_data, PriorSpec(), quick(regional=True, iterations=200))
    assert np.all(np.ptp(s.shapes, axis=1) == 0)
    assert "xi" in s.marginal_scalars()


def test_single_site_shape_recovery():
    cfg = SimConfig(MarginalParams([math.log(50.0)], [0.2]), DMParams.single(1, 1.0), (0.01,), (100.0,), 60_000,
                    seed=3)
    data, _, _ = simulated_data(cfg)
    (s,) = run_chains(data, PriorSpec(), ChainConfig(n_chains=1, iterations=6000, thin=2, seed=1))
    xi = s.shapes[:, 0]
    assert abs(xi.mean() - 0.2) < 2 * xi.std()


def test_diagnose_and_select(censored_data):
    out = run_chains(censored_data, PriorSpec(), quick(n_chains=2, iterations=700))
    rep = diagnose(out)
    assert set(rep.rhat) >= {"sigma_s1", "xi_s1", "k"}
    assert len(rep.stationarity["sigma_s1"]) == 2
    chosen = select_chains(out, rep)
    assert 1 <= len(chosen) <= 2
    assert len(select_chains(out, rep, "best")) == 1
    merged = pool(out)
    assert merged.n_draws == sum(s.n_draws for s in out)
    with pytest.raises(ValueError):
        select_chains(out, rep, "nonsense")


@pytest.mark.slow
def test_mixture_recovery_on_pair_grid():
    cfg = toy_config(n_days=100_000, seed=11)
    data, _, _ = simulated_data(cfg)
    (s,) = run_chains(data, PriorSpec(), ChainConfig(n_chains=1, iterations=10_000, thin=10, seed=2))
    w = (np.arange(400) + 0.5) / 400
    post = np.mean([pair_angular_density(w, m, 0, 1) for m in s.mixtures], axis=0)
    truth = pair_angular_density(w, cfg.mixture, 0, 1)
    assert np.mean(np.abs(post - truth)) < 0.1

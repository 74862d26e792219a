import math

import numpy as np
import pytest
from helpers import random_psi
from scipy import integrate
from scipy.special import gammaln

from dmpot.angular import (
    ConstraintError,
    DMParams,
    chi_coefficient,
    conditional_tail,
    dirichlet_density,
    dm_density,
    exponent_density,
    exponent_measure_many,
    exponent_measure_region,
    independent_joint_return_period,
    joint_return_period,
    marginal_pair,
    sample_dm,
    simulate_exponent_points,
    solve_last_center,
)

UNIFORM2 = DMParams.single(2, 2.0)


def two_component():
    return DMParams.from_free([0.5, 0.5], [[0.3, 0.7]], [4.0, 9.0])


def test_uniform_dirichlet_is_flat():
    for w in (0.1, 0.5, 0.93):
        assert dirichlet_density([w, 1 - w], [0.5, 0.5], 2.0) == pytest.approx(1.0, rel=1e-14)


def test_dirichlet_hand_value():
    expected = math.exp(gammaln(4) - 2 * gammaln(2)) * 0.25
    assert expected == pytest.approx(1.5)
    assert dirichlet_density([0.5, 0.5], [0.5, 0.5], 4.0) == pytest.approx(1.5, rel=1e-14)


def test_dirichlet_integrates_to_one_on_triangle():
    mu, nu = np.array([0.2, 0.3, 0.5]), 6.0
    val, _ = integrate.dblquad(
        lambda b, a: dirichlet_density([a, b, 1 - a - b], mu, nu), 0, 1, 0, lambda a: 1 - a, epsabs=1e-10
    )
    assert val == pytest.approx(1.0, abs=1e-6)


def test_single_component_mixture_is_dirichlet():
    psi = DMParams.single(3, 5.0)
    w = np.array([0.2, 0.5, 0.3])
    assert dm_density(w, psi) == pytest.approx(dirichlet_density(w, [1 / 3] * 3, 5.0), rel=1e-13)


def test_mixture_is_weighted_sum():
    psi = two_component()
    w = np.array([0.42, 0.58])
    hand = sum(p * dirichlet_density(w, c, s) for p, c, s in zip(psi.weights, psi.centers, psi.shapes))
    assert dm_density(w, psi) == pytest.approx(hand, rel=1e-13)


def test_mixture_mean_is_simplex_centre():
    rng = np.random.default_rng(5)
    for _ in range(5):
        psi = random_psi(rng)
        w = sample_dm(psi, 200_000, rng)
        np.testing.assert_allclose(w.mean(axis=0), 1 / psi.dim, atol=4 * w.std(axis=0).max() / math.sqrt(2e5) + 1e-4)


def test_single_component_is_forced_to_centre():
    psi = DMParams.single(4, 3.0)
    np.testing.assert_allclose(psi.centers[0], 0.25)


def test_last_centre_linear_solve():
    np.testing.assert_allclose(solve_last_center([0.5, 0.5], [[0.3, 0.7]]), [0.7, 0.3], atol=1e-15)


def test_infeasible_last_centre():
    with pytest.raises(ConstraintError):
        solve_last_center([0.9, 0.1], [[0.3, 0.7]])


def test_constructor_rejects_off_centre_mass():
    with pytest.raises(ConstraintError):
        DMParams([0.5, 0.5], [[0.3, 0.7], [0.6, 0.4]], [2.0, 2.0])


def test_sampling_concentrates_and_tracks_weights():
    rng = np.random.default_rng(0)
    w = sample_dm(DMParams.single(3, 1e6), 10_000, rng)
    assert w.var(axis=0).max() < 1e-6
    psi = DMParams.from_free([0.2, 0.8], [[0.05, 0.95]], [500.0, 500.0])
    w = sample_dm(psi, 20_000, rng)
    share = np.mean(w[:, 0] < 0.2)
    assert abs(share - 0.2) < 3 * math.sqrt(0.2 * 0.8 / 20_000)


def test_exponent_density_homogeneity_and_hand_value():
    psi = two_component()
    x = np.array([1.3, 0.4])
    assert exponent_density(2.5 * x, psi) == pytest.approx(2.5**-3 * exponent_density(x, psi), rel=1e-13)
    assert exponent_density([1.0, 1.0], UNIFORM2) == pytest.approx(0.25, rel=1e-14)


def test_exponent_mass_of_angular_region():
    psi = two_component()
    rng = np.random.default_rng(2)
    r0, n = 2.0, 400_000
    pts = simulate_exponent_points(psi, n, r0, rng)
    w = pts[:, 0] / pts.sum(axis=1)
    # mass of {r > r0, w in B} with B = (0, 0.4)
    est = 2 / r0 * np.mean(w < 0.4)
    H_B, _ = integrate.quad(lambda t: dm_density([t, 1 - t], psi), 0, 0.4)
    assert est == pytest.approx(2 * H_B / r0, abs=4 * 2 / r0 * math.sqrt(0.25 / n))


@pytest.mark.parametrize("u", [0.7, 3.0])
def test_exponent_measure_analytic_fixtures(u):
    assert exponent_measure_region([u, u], UNIFORM2).value == pytest.approx(1.5 / u, rel=1e-10)
    point = DMParams.single(2, 1e14)
    assert exponent_measure_region([u, u], point).value == pytest.approx(1.0 / u, rel=1e-6)


def test_exponent_measure_vanishes_far_out():
    assert exponent_measure_region([np.inf, np.inf], UNIFORM2).value == 0.0
    assert exponent_measure_region([1e12, 1e12], UNIFORM2).value < 1e-11


def test_methods_agree():
    rng = np.random.default_rng(11)
    for _ in range(10):
        psi = random_psi(rng)
        u = rng.uniform(0.5, 5.0, psi.dim)
        q = exponent_measure_region(u, psi).value
        assert exponent_measure_region(u, psi, method="fast").value == pytest.approx(q, rel=1e-7)
        assert exponent_measure_region(u, psi, method="qmc", nodes=2**15).value == pytest.approx(q, rel=1e-2)


def test_infinite_threshold_drops_the_coordinate():
    psi = DMParams.single(3, 4.0)
    v = exponent_measure_many([[2.0, np.inf, np.inf]], psi)[0]
    assert v == pytest.approx(0.5, rel=1e-9)


def test_chi_limits():
    assert chi_coefficient(0, 1, DMParams.single(2, 1e8)) == pytest.approx(1.0, abs=1e-3)
    edges = DMParams.from_free([0.5, 0.5], [[1e-6, 1 - 1e-6]], [1e6, 1e6])
    assert chi_coefficient(0, 1, edges) < 1e-5
    assert chi_coefficient(0, 1, UNIFORM2) == pytest.approx(0.5, abs=1e-12)


def test_chi_beta_matches_quadrature():
    rng = np.random.default_rng(4)
    for _ in range(10):
        psi = random_psi(rng)
        assert chi_coefficient(0, 1, psi) == pytest.approx(chi_coefficient(0, 1, psi, method="quad"), abs=1e-8)


def test_pair_marginal_is_valid_and_consistent():
    rng = np.random.default_rng(8)
    psi = random_psi(rng, d=4, k=3)
    pair = marginal_pair(psi, 1, 3)
    u = np.array([1.7, 0.9])
    full = np.full(4, np.inf)
    full[[1, 3]] = u
    assert exponent_measure_region(u, pair).value == pytest.approx(exponent_measure_region(full, psi).value, rel=1e-8)


def test_joint_return_periods():
    assert joint_return_period(10, 0.645) == pytest.approx(15.5, abs=0.05)
    assert joint_return_period(10, 1.0) == 10
    with pytest.warns(RuntimeWarning):
        assert joint_return_period(10, 0.0) == math.inf
    assert independent_joint_return_period(10, 1.0) == pytest.approx(36500.0)


def test_conditional_tail_at_threshold_is_chi():
    psi = two_component()
    assert conditional_tail(0, 1, [1.0], 1.0, psi)[0] == pytest.approx(chi_coefficient(0, 1, psi), abs=1e-8)
    assert conditional_tail(0, 1, [500.0], 500.0, psi)[0] == pytest.approx(chi_coefficient(0, 1, psi), abs=1e-8)
    assert conditional_tail(0, 1, [3.0], 3.0, DMParams.single(2, 1e9))[0] == pytest.approx(1.0, abs=1e-3)


def test_conditional_tail_matches_simulation():
    psi = DMParams.from_free([0.4, 0.6], [[0.7, 0.3]], [5.0, 15.0])
    rng = np.random.default_rng(9)
    n = 2_000_000
    pts = simulate_exponent_points(psi, n, 1.0, rng)
    cond = pts[:, 1] > 1.0
    for x in (1.5, 4.0):
        hit = cond & (pts[:, 0] > x)
        p = hit.sum() / cond.sum()
        se = math.sqrt(p * (1 - p) / cond.sum())
        assert conditional_tail(0, 1, [x], 1.0, psi)[0] == pytest.approx(p, abs=3 * se)

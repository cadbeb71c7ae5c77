import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dv_values, kl_rows, simplex_grid
from tempered_vb.tempered_core import (
    BoundQuery,
    DiscreteModel,
    LipschitzStats,
    TemperConfig,
    concentration_level,
    dv_gap,
    empirical_risk,
    epsilon_n_lipschitz,
    expectation_bound,
    exponential_tilting,
    matrix_bound_constant,
    matrix_bound_rhs,
    misspecified_bound,
    pac_bayes_rhs,
    tempered_posterior_discrete,
)


def test_config_validation():
    for a in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            TemperConfig(alpha=a)
    with pytest.raises(ValueError):
        TemperConfig(alpha=0.5, prior_variance=0.0)


class TestTemperedPosterior:
    def test_weights_one_to_two(self):
        model = DiscreteModel([0.5, 0.5], [[0.0], [math.log(4.0)]])
        np.testing.assert_allclose(tempered_posterior_discrete(model, TemperConfig(0.5)), [1 / 3, 2 / 3], rtol=1e-14)

    def test_identical_rows_give_prior(self):
        prior = np.array([0.2, 0.5, 0.3])
        row = np.array([-1.0, -2.5, -0.3])
        model = DiscreteModel(prior, np.tile(row, (3, 1)))
        np.testing.assert_allclose(tempered_posterior_discrete(model, TemperConfig(0.7)), prior, rtol=1e-14)

    def test_alpha_near_one_is_bayes(self):
        rng = np.random.default_rng(0)
        prior = np.array([0.4, 0.6])
        ll = rng.normal(size=(2, 10))
        post = prior * np.exp(ll.sum(1))
        post /= post.sum()
        tempered = tempered_posterior_discrete(DiscreteModel(prior, ll), TemperConfig(1 - 1e-9))
        np.testing.assert_allclose(tempered, post, rtol=1e-7)

    def test_extreme_loglik_stable(self):
        model = DiscreteModel([0.5, 0.5], [[-1e5], [-1e5 - 2.0]])
        np.testing.assert_allclose(
            tempered_posterior_discrete(model, TemperConfig(0.5)), [1 / (1 + math.exp(-1)), 1 / (1 + math.e)], rtol=1e-10
        )

    def test_all_minus_infinity(self):
        model = DiscreteModel([0.5, 0.5], [[-np.inf], [-np.inf]])
        with pytest.raises(ValueError):
            tempered_posterior_discrete(model, TemperConfig(0.5))

    def test_partial_minus_infinity(self):
        model = DiscreteModel([0.5, 0.5], [[-np.inf, 0.0], [-1.0, -1.0]])
        np.testing.assert_allclose(tempered_posterior_discrete(model, TemperConfig(0.5)), [0.0, 1.0])

    def test_table_shape_checked(self):
        with pytest.raises(ValueError):
            DiscreteModel([0.5, 0.5], np.zeros((3, 4)))
        with pytest.raises(ValueError):
            DiscreteModel([0.5, 0.5], [[np.nan], [0.0]])


class TestDonskerVaradhan:
    def test_tilting_closes_gap(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            J = int(rng.integers(2, 8))
            prior = rng.dirichlet(np.ones(J))
            h = rng.normal(scale=3, size=J)
            assert dv_gap(exponential_tilting(prior, h), prior, h) < 1e-10

    def test_other_rho_positive_gap(self):
        rng = np.random.default_rng(2)
        prior = rng.dirichlet(np.ones(4))
        h = rng.normal(size=4)
        tilt = exponential_tilting(prior, h)
        for _ in range(50):
            rho = rng.dirichlet(np.ones(4))
            assert not np.allclose(rho, tilt)
            assert dv_gap(rho, prior, h) > 0

    def test_constant_h_prior(self):
        prior = np.array([0.1, 0.3, 0.6])
        assert dv_gap(prior, prior, np.full(3, 2.5)) == pytest.approx(0.0, abs=1e-14)

    def test_uniform_prior_grid_oracle(self):
        prior = np.full(3, 1 / 3)
        h = np.array([0.0, 1.0, 2.0])
        grid = simplex_grid(3, 1000)
        best = dv_values(grid, prior, h).max()
        log_mgf = math.log(np.mean(np.exp(h)))
        # gap at rho = prior equals the grid maximum minus the DV value at the prior
        expected = best - (prior @ h)
        assert abs(dv_gap(prior, prior, h) - expected) < 1e-5
        assert best <= log_mgf + 1e-12
        assert log_mgf - best < 1e-5

    def test_not_dominated(self):
        with pytest.raises(ValueError):
            dv_gap([0.5, 0.5], [1.0, 0.0], [0.0, 0.0])


def _two_point_model():
    ll = np.array([[-0.7, -0.1, -0.4], [-1.2, -0.3, -0.2], [-0.5, -0.5, -0.9]])
    return DiscreteModel(np.full(3, 1 / 3), ll, theta0=0)


class TestPacBayes:
    def test_prior_has_no_kl_term(self):
        model, cfg = _two_point_model(), TemperConfig(0.5)
        r = empirical_risk(model)
        expected = (0.5 / 0.5) * model.prior @ r / 3 + math.log(10) / (3 * 0.5)
        np.testing.assert_allclose(pac_bayes_rhs(model.prior, model, cfg, 0.1), expected, rtol=1e-14)

    def test_eps_one(self):
        model, cfg = _two_point_model(), TemperConfig(0.3)
        rho = np.array([0.2, 0.5, 0.3])
        kl = float(np.sum(rho * np.log(rho / model.prior)))
        expected = 0.3 / 0.7 * rho @ empirical_risk(model) / 3 + kl / (3 * 0.7)
        np.testing.assert_allclose(pac_bayes_rhs(rho, model, cfg, 1.0), expected, rtol=1e-14)

    def test_tempered_posterior_is_minimiser(self):
        model, cfg = _two_point_model(), TemperConfig(0.5)
        post = tempered_posterior_discrete(model, cfg)
        grid = simplex_grid(3, 1000)
        a, n = cfg.alpha, model.n
        grid_vals = a / (1 - a) * grid @ empirical_risk(model) / n + (kl_rows(grid, model.prior) + math.log(10)) / (n * (1 - a))
        assert pac_bayes_rhs(post, model, cfg, 0.1) <= grid_vals.min() + 1e-12

    def test_infinite_kl(self):
        model = DiscreteModel([1.0, 0.0], [[0.0], [0.0]], theta0=0)
        with pytest.raises(ValueError):
            pac_bayes_rhs([0.5, 0.5], model, TemperConfig(0.5), 0.1)

    def test_needs_theta0(self):
        model = DiscreteModel([0.5, 0.5], [[0.0], [0.0]])
        with pytest.raises(ValueError):
            pac_bayes_rhs([0.5, 0.5], model, TemperConfig(0.5), 0.1)


class TestRates:
    def test_epsilon_n_example(self):
        stats = LipschitzStats(B1=1.0, B2=1.0, d=2)
        value = epsilon_n_lipschitz(stats, 100, TemperConfig(0.5, 1.0))
        mp.mp.dps = 30
        oracle = mp.mpf(2) / 100 * (mp.log(100**2 * mp.sqrt(2)) / 2 + mp.mpf(1) / 100) - mp.mpf(2) / 200
        np.testing.assert_allclose(value, float(oracle), rtol=1e-13)
        assert value == pytest.approx(0.0857691396, abs=1e-10)

    def test_large_B1_dominates(self):
        stats = LipschitzStats(B1=1e6, B2=1.0, d=2)
        assert epsilon_n_lipschitz(stats, 100, TemperConfig(0.5)) == 1e4

    def test_decreasing_in_n(self):
        stats = LipschitzStats(B1=3.0, B2=20.0, d=3, theta0_norm=1.0)
        cfg = TemperConfig(0.5, 2.0)
        vals = [epsilon_n_lipschitz(stats, n, cfg) for n in 2 ** np.arange(2, 16)]
        assert np.all(np.diff(vals) < 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 50), st.integers(2, 10**6), st.floats(1e-8, 1e8))
    def test_positive_for_any_prior_variance(self, d, n, th2):
        # the KL branch is minimised at th2 = 2/n where it equals (d/n) log(2 n sqrt(d)) / 2
        stats = LipschitzStats(B1=0.0, B2=0.0, d=d)
        value = epsilon_n_lipschitz(stats, n, TemperConfig(0.5, th2))
        assert value >= (d / n) * 0.5 * math.log(2 * n * math.sqrt(d)) * (1 - 1e-9)

    def test_stats_validation(self):
        with pytest.raises(ValueError):
            LipschitzStats(B1=-1.0, B2=1.0, d=1)
        with pytest.raises(ValueError):
            LipschitzStats(B1=1.0, B2=1.0, d=0)


class TestConcentration:
    def test_level(self):
        assert concentration_level(BoundQuery(0.1, 1000, 0.5)).level == pytest.approx(0.6)

    def test_prob(self):
        assert concentration_level(BoundQuery(0.1, 1000, 0.5)).prob == pytest.approx(0.98)

    def test_fine_level(self):
        q = BoundQuery(0.1, 1000, 0.5, eps=math.exp(-100), eta=0.01)
        out = concentration_level(q)
        expected = (1.5 * 0.1 + 0.5 * math.sqrt(0.1 / 10) + 100 / 1000) / 0.5
        np.testing.assert_allclose(out.fine_level, expected, rtol=1e-12)
        assert out.fine_level >= 1.5 * 0.1 / 0.5
        np.testing.assert_allclose(out.fine_prob, 1 - math.exp(-100) - 0.01)

    def test_default_budgets(self):
        q = BoundQuery(0.05, 200, 0.5)
        eps, eta = q.default_budgets()
        assert eps == pytest.approx(math.exp(-10))
        assert eta == pytest.approx(0.1)

    def test_vacuous(self):
        with pytest.raises(ValueError):
            concentration_level(BoundQuery(0.01, 100, 0.5))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.003, 0.5), st.integers(1000, 10**6))
    def test_prob_in_unit_interval_and_level_increasing(self, a, e, n):
        q = BoundQuery(e, n, a)
        out = concentration_level(q)
        assert 0 < out.prob < 1
        assert concentration_level(BoundQuery(e, n, a + 0.01)).level > out.level


class TestBounds:
    def test_expectation_bound(self):
        assert expectation_bound(0.1, 0.5) == pytest.approx(0.3)

    def test_misspecified(self):
        cfg = TemperConfig(0.5)
        assert misspecified_bound(0.0, 0.2, cfg) == expectation_bound(0.2, 0.5)
        assert misspecified_bound(1.0, 0.0, cfg) == pytest.approx(1.0)
        grid = np.linspace(0, 2, 11)
        vals = np.array([[misspecified_bound(k, e, cfg) for e in grid] for k in grid])
        assert np.all(np.diff(vals, axis=0) >= 0) and np.all(np.diff(vals, axis=1) >= 0)

    def test_matrix_constant(self):
        assert matrix_bound_constant(1.0) == pytest.approx(math.log(16384 * math.sqrt(math.pi)) + 3, rel=1e-14)
        assert matrix_bound_constant(1.0) == pytest.approx(13.27642547, abs=1e-8)
        assert matrix_bound_constant(2.0) > matrix_bound_constant(1.0)
        mp.mp.dps = 50
        oracle = mp.log(8 * mp.sqrt(mp.pi) * mp.gamma(50) * mp.mpf(2) ** 501) + 3
        np.testing.assert_allclose(matrix_bound_constant(50.0), float(oracle), rtol=1e-13)
        with pytest.raises(ValueError):
            matrix_bound_constant(0.0)

    def test_matrix_rhs_exact_lowrank(self):
        r, m, p, n, a, al, B, s2 = 2, 10, 12, 400, 1.0, 0.5, 1.0, 0.25
        fit = al / (1 - al) * (math.sqrt(B) / n) ** 2 / (2 * s2 * m * p)
        comp = 2 * 1.5 * 3 * r * (m + p) * (math.log(n * m * p) + matrix_bound_constant(a)) / (n * 0.5)
        np.testing.assert_allclose(matrix_bound_rhs(r, m, p, n, a, al, 0.0, B, s2), fit + comp, rtol=1e-14)

    def test_matrix_rhs_doubling_n(self):
        args = dict(r=1, m=30, p=30, a=1.0, alpha=0.5, approx_err=0.0, B=1.0, sigma2=0.01)
        v1, v2 = matrix_bound_rhs(n=500, **args), matrix_bound_rhs(n=1000, **args)
        growth = (math.log(1000 * 900) + matrix_bound_constant(1.0)) / (math.log(500 * 900) + matrix_bound_constant(1.0))
        np.testing.assert_allclose(v2 / v1, growth / 2, rtol=1e-6)

    def test_matrix_rhs_small_alpha(self):
        big = matrix_bound_rhs(1, 5, 5, 100, 1.0, 1e-9, 10.0, 1.0, 1.0)
        comp = 2 * (1 + 1e-9) * 3 * 10 * (math.log(2500) + matrix_bound_constant(1.0)) / (100 * (1 - 1e-9))
        assert big - comp < 1e-8

    def test_matrix_rhs_rank_check(self):
        with pytest.raises(ValueError):
            matrix_bound_rhs(6, 5, 5, 100, 1.0, 0.5, 0.0, 1.0, 1.0)

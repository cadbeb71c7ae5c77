import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from tempered_vb.divergences import SharedVarGaussianPair, renyi_gaussian_shared_var
from tempered_vb.gaussian_vb import (
    FeasibleSet,
    GaussianLinearModel,
    SgdConfig,
    VariationalGaussian,
    default_x0,
    expected_objective_linear_gaussian,
    grad_objective_sample,
    integrated_divergence_mc,
    objective_sample,
    project_feasible,
    projected_sgd,
    step_size,
    svb_run,
)
from tempered_vb.logistic_model import sample_design


def linear_model(seed, n=30, d=2, rho=0.0):
    rng = np.random.default_rng(seed)
    cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
    Z = rng.multivariate_normal(np.zeros(d), cov, size=n)
    theta = rng.normal(size=d)
    return GaussianLinearModel(Z, Z @ theta + rng.normal(size=n), 1.0)


def random_q(rng, d):
    A = rng.normal(size=(d, d))
    return VariationalGaussian(rng.normal(size=d), 0.5 * A + 1.5 * np.eye(d))


class TestTypes:
    def test_family_checks(self):
        with pytest.raises(ValueError):
            VariationalGaussian(np.zeros(2), [[1.0, 0.1], [0.0, 1.0]], "diag")
        with pytest.raises(ValueError):
            VariationalGaussian(np.zeros(2), np.diag([1.0, 2.0]), "iso")
        with pytest.raises(ValueError):
            VariationalGaussian(np.zeros(2), np.eye(3))
        with pytest.raises(ValueError):
            VariationalGaussian(np.zeros(2), np.eye(2), "block")

    def test_vector_round_trip(self):
        q = random_q(np.random.default_rng(0), 3)
        back = VariationalGaussian.from_vector(q.to_vector(), 3)
        np.testing.assert_array_equal(back.mean, q.mean)
        np.testing.assert_array_equal(back.factor, q.factor)
        np.testing.assert_allclose(q.cov, q.factor @ q.factor.T)

    def test_scalar_factor(self):
        q = VariationalGaussian(np.zeros(3), 0.5, "iso")
        np.testing.assert_array_equal(q.factor, 0.5 * np.eye(3))

    def test_feasible_set(self):
        with pytest.raises(ValueError):
            FeasibleSet(0.0)
        with pytest.raises(ValueError):
            FeasibleSet(1.0, -1e-3)
        FeasibleSet(1.0, 1 / (100 * math.sqrt(4))).check_floor(100, 4)
        with pytest.raises(ValueError):
            FeasibleSet(1.0, 0.01).check_floor(100, 4)

    def test_sgd_config(self):
        with pytest.raises(ValueError):
            SgdConfig(T=0, L=1.0)
        with pytest.raises(ValueError):
            SgdConfig(T=5, L=-1.0)

    def test_default_x0(self):
        q = default_x0(4, 100, "iso")
        np.testing.assert_allclose(np.diag(q.cov), 1 / (100 * 2.0))
        assert q.family == "iso"


class TestObjective:
    def test_alpha_zero_is_log_ratio(self):
        rng = np.random.default_rng(1)
        q, xi = random_q(rng, 2), rng.normal(size=2)
        theta = q.mean + q.factor @ xi
        S = q.cov
        log_q = -0.5 * (2 * math.log(2 * math.pi) + np.linalg.slogdet(S)[1] + (theta - q.mean) @ np.linalg.solve(S, theta - q.mean))
        log_p = -0.5 * (2 * math.log(2 * math.pi * 2.0) + theta @ theta / 2.0)
        model = linear_model(0)
        np.testing.assert_allclose(objective_sample(q, xi, model, 2.0, 0.0), log_q - log_p, rtol=1e-12)

    def test_prior_equal_q_monte_carlo(self):
        model, th2, a = linear_model(2), 0.7, 0.5
        q = VariationalGaussian(np.zeros(2), math.sqrt(th2) * np.eye(2))
        xi = np.random.default_rng(3).normal(size=(20_000, 2))
        f = np.array([objective_sample(q, x, model, th2, a) for x in xi])
        target = -a * model.expected_loglik(q)
        assert abs(f.mean() - target) < 3 * f.std(ddof=1) / math.sqrt(f.size)

    def test_unbiased_linear_gaussian(self):
        model, th2, a = linear_model(4), 1.3, 0.6
        q = random_q(np.random.default_rng(5), 2)
        xi = np.random.default_rng(6).normal(size=(100_000, 2))
        f = np.array([objective_sample(q, x, model, th2, a) for x in xi])
        target = expected_objective_linear_gaussian(q, model, th2, a)
        assert abs(f.mean() - target) < 3 * f.std(ddof=1) / math.sqrt(f.size)

    def test_singular_factor(self):
        model = linear_model(0)
        q = VariationalGaussian(np.zeros(2), np.diag([1.0, 0.0]))
        with pytest.raises(np.linalg.LinAlgError):
            objective_sample(q, np.ones(2), model, 1.0, 0.5)
        with pytest.raises(np.linalg.LinAlgError):
            grad_objective_sample(q, np.ones(2), model, 1.0, 0.5)


class TestGradient:
    @pytest.mark.parametrize("kind", ["linear", "logistic"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(7)
        for trial in range(10):
            d = int(rng.integers(1, 5))
            model = linear_model(trial, d=d) if kind == "linear" else sample_design("gaussian", d, 25, trial, rng.normal(size=d))
            q, xi = random_q(rng, d), rng.normal(size=d)
            th2, a = rng.uniform(0.5, 2.0), rng.uniform(0.1, 0.9)
            gm, gC = grad_objective_sample(q, xi, model, th2, a)
            f = lambda v: objective_sample(VariationalGaussian.from_vector(v, d), xi, model, th2, a)
            fd = central_difference(f, q.to_vector())
            exact = np.concatenate([gm, gC.ravel()])
            np.testing.assert_allclose(exact, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())

    def test_alpha_zero_mean_gradient(self):
        rng = np.random.default_rng(8)
        q, xi = random_q(rng, 3), rng.normal(size=3)
        gm, _ = grad_objective_sample(q, xi, linear_model(0, d=3), 2.0, 0.0)
        np.testing.assert_allclose(gm, (q.mean + q.factor @ xi) / 2.0)

    def test_stationary_point(self):
        # for a quadratic model the expected gradient vanishes at the exact Gaussian optimum;
        # the cubature xi in {+-sqrt(d) e_i} reproduces the first two moments of N(0, I)
        model, th2, a, d = linear_model(9, d=3), 1.5, 0.4, 3
        precision = a * model.Z.T @ model.Z + np.eye(d) / th2
        mean = np.linalg.solve(precision, a * model.Z.T @ model.y)
        C = np.linalg.cholesky(np.linalg.inv(precision))
        q = VariationalGaussian(mean, C)
        nodes = math.sqrt(d) * np.vstack([np.eye(d), -np.eye(d)])
        grads = [grad_objective_sample(q, x, model, th2, a) for x in nodes]
        gm = np.mean([g[0] for g in grads], axis=0)
        gC = np.mean([g[1] for g in grads], axis=0)
        assert np.linalg.norm(gm) < 1e-8
        assert np.linalg.norm(gC) < 1e-8


class TestProjection:
    def test_inside_unchanged(self):
        q = VariationalGaussian(np.array([0.1, 0.2]), 0.3 * np.eye(2))
        out = project_feasible(q, FeasibleSet(5.0, 0.01))
        np.testing.assert_array_equal(out.to_vector(), q.to_vector())

    def test_rescale_to_ball(self):
        q = random_q(np.random.default_rng(10), 3)
        B = np.linalg.norm(q.to_vector()) / 2
        out = project_feasible(q, FeasibleSet(B))
        np.testing.assert_allclose(np.linalg.norm(out.to_vector()), B, rtol=1e-14)
        np.testing.assert_allclose(out.to_vector(), q.to_vector() / 2, rtol=1e-14)

    def test_floor_zero_factor(self):
        q = VariationalGaussian(np.zeros(3), np.zeros((3, 3)))
        out = project_feasible(q, FeasibleSet(10.0, 0.01))
        lam = np.linalg.eigvalsh(out.cov)
        np.testing.assert_allclose(lam.min(), 0.01, atol=1e-10)

    @pytest.mark.parametrize("family", ["full", "diag", "iso"])
    def test_family_preserved(self, family):
        rng = np.random.default_rng(11)
        C = {"full": rng.normal(size=(3, 3)), "diag": np.diag([0.01, 2.0, 0.05]), "iso": 0.02 * np.eye(3)}[family]
        out = project_feasible(VariationalGaussian(rng.normal(size=3), C, family), FeasibleSet(2.0, 0.05))
        assert out.family == family
        assert np.linalg.eigvalsh(out.cov).min() >= 0.05 * (1 - 1e-9)
        assert np.linalg.norm(out.to_vector()) <= 2.0 * (1 + 1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0), st.floats(0.0, 0.2), st.sampled_from(["full", "diag", "iso"]))
    def test_idempotent(self, seed, B, psi, family):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        C = 3 * rng.normal(size=(d, d))
        if family == "diag":
            C = np.diag(np.diag(C))
        elif family == "iso":
            C = C[0, 0] * np.eye(d)
        fs = FeasibleSet(B, psi)
        once = project_feasible(VariationalGaussian(3 * rng.normal(size=d), C, family), fs)
        twice = project_feasible(once, fs)
        np.testing.assert_allclose(twice.to_vector(), once.to_vector(), rtol=1e-10, atol=1e-12)


class TestSgd:
    def test_step_size(self):
        assert step_size(1.0, 2.0, 8) == pytest.approx(1 / 8)
        assert step_size(1.0, 1.0, 2) == pytest.approx(0.5)
        assert step_size(3.0, 1.7, 400) == pytest.approx(step_size(3.0, 1.7, 100) / 2)
        with pytest.raises(ValueError):
            step_size(0.0, 1.0, 1)

    def test_single_step(self):
        model, th2, a = linear_model(12), 1.0, 0.5
        fs = FeasibleSet(3.0, 1e-3)
        x0 = VariationalGaussian(np.array([0.2, -0.1]), 0.5 * np.eye(2))
        res = svb_run(model, th2, a, fs, SgdConfig(T=1, L=50.0, seed=4), x0)
        xi = np.random.default_rng(4).standard_normal(2)
        gm, gC = grad_objective_sample(x0, xi, model, th2, a)
        gamma = step_size(3.0, 50.0, 1)
        manual = project_feasible(VariationalGaussian(x0.mean - gamma * gm, x0.factor - gamma * gC), fs)
        np.testing.assert_allclose(res.q.to_vector(), manual.to_vector(), rtol=1e-14)
        assert res.step == gamma

    def test_deterministic_quadratic_matches_hand_rolled(self):
        A = np.array([[3.0, 0.5], [0.5, 1.0]])
        b = np.array([1.0, -2.0])
        grad = lambda x, _: A @ x - b
        project = lambda x: x if np.linalg.norm(x) <= 1.0 else x / np.linalg.norm(x)
        x_bar, its = projected_sgd(grad, np.zeros(2), project, 0.1, 25, keep_iterates=True)
        x, hand = np.zeros(2), []
        for _ in range(25):
            x = x - 0.1 * (A @ x - b)
            n = np.linalg.norm(x)
            x = x / n if n > 1 else x
            hand.append(x)
        np.testing.assert_array_equal(np.array(its), np.array(hand))
        np.testing.assert_array_equal(x_bar, np.mean(hand, axis=0))

    def test_seeded_determinism(self):
        model = sample_design("unit_sphere", 2, 100, 3, np.array([0.5, 0.0]))
        fs, cfg = FeasibleSet(2.0, 1 / (100 * math.sqrt(2))), SgdConfig(T=200, L=400.0, seed=9)
        r1 = svb_run(model, 1.0, 0.5, fs, cfg)
        r2 = svb_run(model, 1.0, 0.5, fs, cfg)
        np.testing.assert_array_equal(r1.q.to_vector(), r2.q.to_vector())
        np.testing.assert_array_equal(r1.trace, r2.trace)

    def test_requires_L(self):
        with pytest.raises(ValueError):
            svb_run(linear_model(0), 1.0, 0.5, FeasibleSet(1.0, 0.01), SgdConfig(T=3))

    def test_nonfinite_gradient(self):
        grad = lambda x, _: np.array([np.nan])
        with pytest.raises(FloatingPointError):
            projected_sgd(grad, np.zeros(1), lambda x: x, 0.1, 3)

    def test_doubling_T_regret(self):
        ratios = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            c = rng.normal(size=3)
            B = 1.0
            gaps = []
            for T in (400, 800):
                step = step_size(B, np.linalg.norm(c), T)
                project = lambda x: x if np.linalg.norm(x) <= B else B * x / np.linalg.norm(x)
                x_bar, _ = projected_sgd(lambda x, _: c, np.zeros(3), project, step, T)
                gaps.append(c @ x_bar + B * np.linalg.norm(c))
            ratios.append(gaps[1] / gaps[0])
        assert 0.5 <= np.median(ratios) <= 1.5 / math.sqrt(2)

    def test_family_nesting(self):
        model, th2, a = linear_model(13, n=40, d=2, rho=0.95), 1.0, 0.5
        L = a * np.linalg.eigvalsh(model.Z.T @ model.Z).max() + 1 / th2 + 2 / 1e-3
        values = {}
        for fam in ("iso", "diag", "full"):
            x0 = VariationalGaussian(np.zeros(2), 0.3 * np.eye(2), fam)
            res = svb_run(model, th2, a, FeasibleSet(10.0, 1e-3), SgdConfig(T=20_000, L=L, step_override=2e-3, seed=1), x0)
            values[fam] = expected_objective_linear_gaussian(res.q, model, th2, a)
        assert values["iso"] >= values["diag"] - 1e-3
        assert values["diag"] >= values["full"] - 1e-3
        assert values["diag"] - values["full"] > 0.1


class TestIntegratedDivergence:
    def test_concentrated(self):
        theta0 = np.array([0.3, -0.2])
        q = VariationalGaussian(theta0, 1e-8 * np.eye(2))
        div = lambda th: renyi_gaussian_shared_var(SharedVarGaussianPair(th[0], theta0[0], 1.0), 0.5)
        assert integrated_divergence_mc(q, div, 200, 0).estimate < 1e-10

    def test_constant(self):
        q = random_q(np.random.default_rng(0), 2)
        out = integrated_divergence_mc(q, lambda th: 0.75, 150, 1)
        assert out.estimate == 0.75 and out.std_error == 0.0

    def test_chi_square_mean(self):
        d, s2 = 4, 0.3
        theta0 = np.arange(4.0)
        q = VariationalGaussian(theta0, math.sqrt(s2) * np.eye(d), "iso")
        out = integrated_divergence_mc(q, lambda th: np.sum((th - theta0) ** 2, axis=-1), 20_000, 2, vectorized=True)
        assert abs(out.estimate - d * s2) < 3 * out.std_error

    def test_infinite(self):
        q = random_q(np.random.default_rng(0), 2)
        out = integrated_divergence_mc(q, lambda th: math.inf if th[0] > 0 else 0.0, 500, 3)
        assert out.estimate == math.inf and out.offending is not None and out.offending[0] > 0

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            integrated_divergence_mc(random_q(np.random.default_rng(0), 2), lambda th: 0.0, 99, 0)

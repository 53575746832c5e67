import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from helpers import is_log_marginal_classical, is_log_marginal_induced, make_dataset

from bvsmiss.datamodel import ModelIndex
from bvsmiss.priors import (
    BetaBinomial,
    Classical,
    Imputation,
    InducedFractional,
    SingularModelError,
    Uniform,
    induced_fractional_prior,
    log_marginal,
    log_marginal_classical,
    log_marginal_imputation,
    log_marginal_induced,
    log_marginal_safe,
    log_model_prior,
    resolve_g,
)


class TestClassical:
    def test_null_bayes_factor_is_zero(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(12)
        x = rng.standard_normal((12, 2))
        null = ModelIndex.null(2)
        assert log_marginal_classical(y, x, null, 5.0) == log_marginal_classical(y, x, null, 50.0)

    def test_hand_value_r2_zero(self):
        # one regressor orthogonal to the centered response: with g = 7 and
        # n = 9 the log Bayes factor against the null is -0.5 log 8
        rng = np.random.default_rng(1)
        n = 9
        y = rng.standard_normal(n)
        y_c = y - y.mean()
        x = rng.standard_normal(n)
        x_c = x - x.mean()
        x_c -= (x_c @ y_c) / (y_c @ y_c) * y_c
        xmat = x_c[:, None]
        bf = log_marginal_classical(y, xmat, ModelIndex((1,)), 7.0) - log_marginal_classical(
            y, xmat, ModelIndex((0,)), 7.0
        )
        assert bf == pytest.approx(-0.5 * math.log(8.0), abs=1e-10)

    def test_quadrature_oracle_five_points(self):
        # direct numerical integration over (intercept, slope, variance) on
        # a 5-point dataset; inner coordinates are scaled by the standard
        # deviation so every slice is O(1) and the adaptive rule converges
        y = np.array([0.3, -1.1, 0.8, 2.0, -0.4])
        x = np.array([[0.5], [-1.0], [0.2], [1.4], [-0.6]])
        g = 4.0
        n = 5
        y_bar = y.mean()
        x_c = x[:, 0] - x[:, 0].mean()
        gram = float(x_c @ x_c)

        def integrand(a_std, b_std, u):
            s2 = math.exp(u)
            s = math.sqrt(s2)
            alpha = y_bar + a_std * s
            beta = b_std * s
            resid = y - alpha - x[:, 0] * beta
            log_f = -0.5 * n * math.log(2 * math.pi * s2) - resid @ resid / (2 * s2)
            log_pb = -0.5 * math.log(2 * math.pi * g * s2 / gram) - gram * beta**2 / (2 * g * s2)
            # jacobian: d(alpha, beta, s2) = s * s * s2 d(a_std, b_std, u)
            return math.exp(log_f + log_pb - math.log(s2) + math.log(s2) + u)

        def over_b(a_std, u):
            v, _ = integrate.quad(lambda b: integrand(a_std, b, u), -14, 14, epsrel=1e-10)
            return v

        def over_a(u):
            v, _ = integrate.quad(lambda a: over_b(a, u), -12, 12, epsrel=1e-10)
            return v

        val, _ = integrate.quad(over_a, -8, 14, epsrel=1e-10, limit=200)
        closed = log_marginal_classical(y, x, ModelIndex((1,)), g)
        assert closed == pytest.approx(math.log(val), abs=1e-6)

    def test_importance_sampling_oracle(self):
        rng = np.random.default_rng(2)
        d, x = make_dataset(rng, 25, 3, beta=[0.8, 0.0, -0.5])
        gamma = ModelIndex((1, 0, 1))
        g = 25.0
        closed = log_marginal_classical(d.y, x, gamma, g)
        est, se = is_log_marginal_classical(d.y, x, gamma, g, seed=3)
        assert abs(closed - est) < 3 * se

    def test_rank_deficiency_raises(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(10)
        col = rng.standard_normal(10)
        x = np.column_stack([col, 2 * col])
        with pytest.raises(SingularModelError):
            log_marginal_classical(y, x, ModelIndex((1, 1)), 10.0)
        assert log_marginal_safe(y, x, ModelIndex((1, 1)), Classical(g=10.0)) == -math.inf

    def test_precondition_n(self):
        y = np.zeros(3) + [0.0, 1.0, 2.0]
        x = np.random.default_rng(0).standard_normal((3, 2))
        with pytest.raises(ValueError, match="p_gamma"):
            log_marginal_classical(y, x, ModelIndex((1, 1)), 3.0)


class TestImputation:
    def test_substitution_identity(self):
        rng = np.random.default_rng(4)
        d, x = make_dataset(rng, 40, 6, beta=[0.5, 0, 0, -0.4, 0, 0.2], rho=0.3)
        x_c = x - x.mean(axis=0)
        sigma_hat = x_c.T @ x_c / 40
        g = 40.0
        for code in range(2**6):
            gamma = ModelIndex.from_int(6, code)
            a = log_marginal_classical(d.y, x, gamma, g)
            b = log_marginal_imputation(d.y, x, gamma, sigma_hat, g)
            assert a == pytest.approx(b, abs=1e-10)

    def test_null_equals_classical_null(self):
        rng = np.random.default_rng(5)
        d, x = make_dataset(rng, 20, 2)
        null = ModelIndex.null(2)
        assert log_marginal_imputation(d.y, x, null, np.eye(2), 20.0) == pytest.approx(
            log_marginal_classical(d.y, x, null, 20.0), abs=1e-14
        )

    def test_importance_sampling_oracle(self):
        rng = np.random.default_rng(6)
        d, x = make_dataset(rng, 30, 3, beta=[0.6, 0.0, 0.0])
        gamma = ModelIndex((1, 1, 0))
        a = rng.standard_normal((3, 3))
        sigma = a @ a.T + 2 * np.eye(3)
        g = 30.0
        closed = log_marginal_imputation(d.y, x, gamma, sigma, g)
        idx = gamma.indices()
        v_pre = np.linalg.inv(30 * sigma[np.ix_(idx, idx)])
        est, se = is_log_marginal_classical(d.y, x, gamma, g, v_pre=v_pre, seed=7)
        assert abs(closed - est) < 3 * se

    def test_bad_sigma_rejected(self):
        rng = np.random.default_rng(7)
        d, x = make_dataset(rng, 15, 2)
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(ValueError):
            log_marginal_imputation(d.y, x, ModelIndex((1, 1)), bad, 15.0)


class TestInducedFractional:
    def test_prior_parameters(self):
        rng = np.random.default_rng(8)
        n = 20
        x = rng.standard_normal((n, 2))
        y = 0.4 * x[:, 0] + rng.standard_normal(n)
        g = 1.0 / n
        beta_hat, prec_scale, shape, rate = induced_fractional_prior(y, x, g)
        y_c = y - y.mean()
        x_c = x - x.mean(axis=0)
        oracle = np.linalg.lstsq(x_c, y_c, rcond=None)[0]
        assert np.allclose(beta_hat, oracle, atol=1e-10)
        assert np.allclose(prec_scale, g * x_c.T @ x_c, atol=1e-12)
        assert shape == pytest.approx((g * n + 2) / 2.0)
        rss = float(y_c @ y_c - (x_c.T @ y_c) @ oracle)
        assert rate == pytest.approx(g * rss / 2.0, abs=1e-10)

    def test_orthonormal_precision_scale(self):
        rng = np.random.default_rng(9)
        n = 16
        raw = rng.standard_normal((n, 2))
        raw -= raw.mean(axis=0)
        q, _ = np.linalg.qr(raw)
        x = q[:, :2]
        y = x[:, 0] + 0.5 * rng.standard_normal(n)
        g = 0.2
        _, prec_scale, _, _ = induced_fractional_prior(y, x, g)
        assert np.allclose(prec_scale, g * np.eye(2), atol=1e-10)

    def test_perfect_fit_rejected(self):
        x = np.linspace(0.0, 1.0, 10)[:, None]
        y = 2.0 + 3.0 * x[:, 0]
        with pytest.raises(ValueError, match="degenerate"):
            induced_fractional_prior(y, x, 0.1)

    def test_g_to_one_limit(self):
        rng = np.random.default_rng(10)
        d, x = make_dataset(rng, 18, 3, beta=[0.7, 0.0, 0.0])
        g = 1.0 - 1e-8
        vals = [log_marginal_induced(d.y, x, ModelIndex.from_int(3, c), g) for c in range(8)]
        assert np.max(np.abs(vals)) < 1e-5  # every fractional Bayes factor goes to 1

    def test_null_quadrature_oracle(self):
        rng = np.random.default_rng(11)
        n = 14
        y = rng.standard_normal(n) * 1.7 + 0.3
        g = 1.0 / n
        y_c = y - y.mean()
        s = float(y_c @ y_c)

        def integrand(phi):
            log_f = 0.5 * n * (math.log(phi) - math.log(2 * math.pi)) - 0.5 * phi * s
            log_prior = (
                (g * n / 2.0) * math.log(g * s / 2.0)
                - gammaln(g * n / 2.0)
                + (g * n / 2.0 - 1.0) * math.log(phi)
                - g * s * phi / 2.0
            )
            return math.exp((1.0 - g) * log_f + log_prior)

        val, _ = integrate.quad(integrand, 0, np.inf, limit=300)
        closed = log_marginal_induced(y, np.empty((n, 0)), ModelIndex(()), g)
        assert closed == pytest.approx(math.log(val), abs=1e-8)

    def test_importance_sampling_oracle(self):
        rng = np.random.default_rng(12)
        d, x = make_dataset(rng, 30, 2, beta=[0.9, 0.0])
        gamma = ModelIndex((1, 1))
        g = 1.0 / 30
        closed = log_marginal_induced(d.y, x, gamma, g)
        est, se = is_log_marginal_induced(d.y, x, gamma, g, seed=13)
        assert abs(closed - est) < 3 * se

    def test_information_paradox_guard(self):
        # as the fit tightens the Bayes factor against the null must diverge
        rng = np.random.default_rng(13)
        n = 30
        x = rng.standard_normal((n, 1))
        x_c = x[:, 0] - x[:, 0].mean()
        noise = rng.standard_normal(n)
        noise -= noise.mean()
        noise -= (noise @ x_c) / (x_c @ x_c) * x_c
        g = 1.0 / n
        null = ModelIndex((0,))
        prev = -np.inf
        for r2 in [0.5, 0.9, 0.99, 0.999, 0.999999]:
            scale = math.sqrt((1 - r2) / r2 * (x_c @ x_c) / (noise @ noise))
            y = x_c + scale * noise
            bf = log_marginal_induced(y, x, ModelIndex((1,)), g) - log_marginal_induced(
                y, x, null, g
            )
            assert bf > prev
            prev = bf
        assert prev > 50.0


class TestInvarianceProperties:
    def test_response_scaling_shifts_all_equally(self):
        rng = np.random.default_rng(14)
        d, x = make_dataset(rng, 22, 3, beta=[0.5, -0.3, 0.0])
        c = 3.7
        for variant_pair in ["classical", "imputation"]:
            deltas = []
            for code in range(8):
                gamma = ModelIndex.from_int(3, code)
                if variant_pair == "classical":
                    before = log_marginal_classical(d.y, x, gamma, 22.0)
                    after = log_marginal_classical(c * d.y, x, gamma, 22.0)
                else:
                    sigma = np.eye(3) * 1.3
                    before = log_marginal_imputation(d.y, x, gamma, sigma, 22.0)
                    after = log_marginal_imputation(c * d.y, x, gamma, sigma, 22.0)
                deltas.append(after - before)
            assert np.max(np.abs(np.diff(deltas))) < 1e-8

    def test_response_shift_invariance(self):
        rng = np.random.default_rng(15)
        d, x = make_dataset(rng, 18, 2, beta=[0.4, 0.0])
        for code in range(4):
            gamma = ModelIndex.from_int(2, code)
            assert log_marginal_classical(d.y, x, gamma, 18.0) == pytest.approx(
                log_marginal_classical(d.y + 11.0, x, gamma, 18.0), abs=1e-8
            )

    def test_column_scaling_invariance(self):
        rng = np.random.default_rng(16)
        d, x = make_dataset(rng, 24, 3, beta=[0.5, 0.2, 0.0], rho=0.2)
        scale = np.array([2.5, 1.0, 1.0])
        x2 = x * scale
        a = rng.standard_normal((3, 3))
        sigma = a @ a.T + np.eye(3)
        sigma2 = sigma * np.outer(scale, scale)
        for code in range(8):
            gamma = ModelIndex.from_int(3, code)
            assert log_marginal_classical(d.y, x, gamma, 24.0) == pytest.approx(
                log_marginal_classical(d.y, x2, gamma, 24.0), abs=1e-8
            )
            assert log_marginal_imputation(d.y, x, gamma, sigma, 24.0) == pytest.approx(
                log_marginal_imputation(d.y, x2, gamma, sigma2, 24.0), abs=1e-8
            )


class TestModelPrior:
    def test_uniform(self):
        assert log_model_prior(ModelIndex((1, 0, 1)), Uniform(), 3) == pytest.approx(
            -3 * math.log(2.0)
        )

    def test_beta_binomial_uniform_on_size(self):
        p = 5
        for k in range(p + 1):
            gamma = ModelIndex.from_indices(p, range(k))
            expected = -math.log((p + 1) * math.comb(p, k))
            assert log_model_prior(gamma, BetaBinomial(1.0, 1.0), p) == pytest.approx(
                expected, abs=1e-12
            )

    @pytest.mark.parametrize("prior", [Uniform(), BetaBinomial(1.0, 1.0), BetaBinomial(2.0, 7.0)])
    @pytest.mark.parametrize("p", [1, 4, 8, 10])
    def test_normalization(self, prior, p):
        total = sum(
            math.exp(log_model_prior(ModelIndex.from_int(p, code), prior, p))
            for code in range(2**p)
        )
        assert total == pytest.approx(1.0, abs=1e-10)


class TestDispatch:
    def test_default_g_values(self):
        assert resolve_g(Classical(), 37) == 37.0
        assert resolve_g(Imputation(), 12) == 12.0
        assert resolve_g(InducedFractional(), 50) == pytest.approx(1.0 / 50)

    def test_dispatch_agrees_with_direct_calls(self):
        rng = np.random.default_rng(17)
        d, x = make_dataset(rng, 20, 2, beta=[0.5, 0.0])
        gamma = ModelIndex((1, 0))
        assert log_marginal(d.y, x, gamma, Classical()) == log_marginal_classical(
            d.y, x, gamma, 20.0
        )
        assert log_marginal(d.y, x, gamma, InducedFractional()) == log_marginal_induced(
            d.y, x, gamma, 1.0 / 20
        )
        sigma = np.eye(2)
        assert log_marginal(d.y, x, gamma, Imputation(), sigma=sigma) == log_marginal_imputation(
            d.y, x, gamma, sigma, 20.0
        )

    def test_imputation_requires_sigma(self):
        rng = np.random.default_rng(18)
        d, x = make_dataset(rng, 15, 2)
        with pytest.raises(ValueError, match="covariance"):
            log_marginal(d.y, x, ModelIndex((1, 0)), Imputation())

import math

import numpy as np
import pytest
from scipy import stats

from bvsmiss.gauss import (
    NiwParams,
    NotSpdError,
    cholesky_logdet,
    conditional_normal,
    niw_posterior,
    sample_inverse_wishart,
    sample_mvn,
    sample_niw,
    wishart_log_normalizer,
)


def random_spd(rng, d, jitter=1.0):
    a = rng.standard_normal((d, d))
    return a @ a.T + jitter * np.eye(d)


class TestCholeskyLogdet:
    def test_identity(self):
        lower, logdet = cholesky_logdet(np.eye(3))
        assert np.array_equal(lower, np.eye(3))
        assert logdet == 0.0

    def test_diagonal(self):
        lower, logdet = cholesky_logdet(np.diag([4.0, 9.0]))
        assert np.allclose(lower, np.diag([2.0, 3.0]))
        assert logdet == pytest.approx(math.log(36.0), abs=1e-14)

    def test_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(0)
        a = random_spd(rng, 5)
        _, logdet = cholesky_logdet(a)
        eig_logdet = float(np.sum(np.log(np.linalg.eigvalsh(a))))
        assert logdet == pytest.approx(eig_logdet, abs=1e-8)

    def test_not_spd_reports_pivot(self):
        bad = np.eye(3)
        bad[1, 1] = -2.0
        with pytest.raises(NotSpdError) as err:
            cholesky_logdet(bad)
        assert err.value.pivot == 1

    def test_asymmetric_rejected(self):
        a = np.eye(2)
        a[0, 1] = 1e-6
        with pytest.raises(NotSpdError):
            cholesky_logdet(a)


class TestConditionalNormal:
    def test_independence_case(self):
        mu = np.array([1.0, 2.0, 3.0])
        mean, cov = conditional_normal(mu, np.eye(3), np.array([2]), np.array([9.0]))
        assert np.allclose(mean, mu[:2])
        assert np.allclose(cov, np.eye(2))

    def test_hand_schur_complement(self):
        sigma = np.array([[2.0, 1.0], [1.0, 2.0]])
        mean, cov = conditional_normal(np.zeros(2), sigma, np.array([1]), np.array([2.0]))
        assert mean[0] == pytest.approx(1.0, abs=1e-12)
        assert cov[0, 0] == pytest.approx(1.5, abs=1e-12)

    def test_against_density_ratio_on_grid(self):
        # p(a | b) evaluated as joint/marginal on a grid of a-values
        rng = np.random.default_rng(3)
        sigma = random_spd(rng, 4)
        mu = rng.standard_normal(4)
        obs_idx = np.array([1, 3])
        obs_vals = rng.standard_normal(2)
        mean, cov = conditional_normal(mu, sigma, obs_idx, obs_vals)
        rest = np.array([0, 2])
        joint = stats.multivariate_normal(mean=mu, cov=sigma)
        marg = stats.multivariate_normal(mean=mu[obs_idx], cov=sigma[np.ix_(obs_idx, obs_idx)])
        cond = stats.multivariate_normal(mean=mean, cov=cov)
        for a_val in [np.zeros(2), np.array([1.0, -0.5]), mean + 0.3]:
            z = np.empty(4)
            z[rest] = a_val
            z[obs_idx] = obs_vals
            ratio = joint.logpdf(z) - marg.logpdf(obs_vals)
            assert ratio == pytest.approx(cond.logpdf(a_val), abs=1e-8)

    def test_cov_ignores_observed_values(self):
        rng = np.random.default_rng(4)
        sigma = random_spd(rng, 3)
        mu = np.zeros(3)
        _, cov1 = conditional_normal(mu, sigma, np.array([0]), np.array([5.0]))
        _, cov2 = conditional_normal(mu, sigma, np.array([0]), np.array([-17.0]))
        assert np.array_equal(cov1, cov2)

    def test_sequential_conditioning_consistent(self):
        rng = np.random.default_rng(5)
        sigma = random_spd(rng, 5)
        mu = rng.standard_normal(5)
        vals = rng.standard_normal(3)
        # condition on {0, 2, 4} at once
        mean_once, cov_once = conditional_normal(mu, sigma, np.array([0, 2, 4]), vals)
        # condition on {0}, then on the coordinates that were 2 and 4
        mean_b, cov_b = conditional_normal(mu, sigma, np.array([0]), vals[:1])
        # remaining coords in original order: 1, 2, 3, 4 -> 2, 4 are local 1, 3
        mean_c, cov_c = conditional_normal(mean_b, cov_b, np.array([1, 3]), vals[1:])
        assert np.allclose(mean_c, mean_once, atol=1e-8)
        assert np.allclose(cov_c, cov_once, atol=1e-8)

    def test_empty_and_full_rejected(self):
        with pytest.raises(ValueError):
            conditional_normal(np.zeros(2), np.eye(2), np.array([], dtype=int), np.array([]))
        with pytest.raises(ValueError):
            conditional_normal(np.zeros(2), np.eye(2), np.array([0, 1]), np.zeros(2))


class TestSampleMvn:
    def test_seed_reproducible(self):
        rng = np.random.default_rng(10)
        sigma = random_spd(rng, 3)
        d1 = sample_mvn(np.zeros(3), sigma, np.random.default_rng(42))
        d2 = sample_mvn(np.zeros(3), sigma, np.random.default_rng(42))
        assert np.array_equal(d1, d2)

    def test_small_scale_mean(self):
        eps = 1e-4
        rng = np.random.default_rng(11)
        draws = np.array([sample_mvn(np.array([2.0]), eps * np.eye(1), rng)[0] for _ in range(10_000)])
        assert abs(draws.mean() - 2.0) < 4 * math.sqrt(eps) / math.sqrt(10_000)

    def test_univariate_variance(self):
        rng = np.random.default_rng(12)
        z = np.array([sample_mvn(np.zeros(1), np.eye(1), rng)[0] for _ in range(100_000)])
        assert 0.97 < z.var() < 1.03


class TestInverseWishart:
    def test_mean(self):
        rng = np.random.default_rng(13)
        draws = np.stack(
            [sample_inverse_wishart(5.0, 2.0 * np.eye(2), rng) for _ in range(100_000)]
        )
        # E = scale / (df - d - 1) = 2 I / 2 = I
        assert np.all(np.abs(draws.mean(axis=0) - np.eye(2)) < 0.02)

    def test_univariate_matches_inverse_gamma(self):
        rng = np.random.default_rng(14)
        df, s = 6.0, 3.0
        draws = np.array([sample_inverse_wishart(df, np.array([[s]]), rng)[0, 0] for _ in range(20_000)])
        ks = stats.kstest(draws, stats.invgamma(a=df / 2.0, scale=s / 2.0).cdf)
        assert ks.pvalue > 0.01

    def test_seed_reproducible(self):
        s = random_spd(np.random.default_rng(15), 3)
        d1 = sample_inverse_wishart(7.0, s, np.random.default_rng(9))
        d2 = sample_inverse_wishart(7.0, s, np.random.default_rng(9))
        assert np.array_equal(d1, d2)

    def test_df_domain(self):
        with pytest.raises(ValueError):
            sample_inverse_wishart(1.5, np.eye(3), np.random.default_rng(0))


class TestNiw:
    def prior(self, d=2):
        return NiwParams(m0=np.zeros(d), k0=2.0, v0=d + 4.0, s0=np.eye(d))

    def test_single_row_at_prior_mean(self):
        prior = self.prior()
        post = niw_posterior(np.zeros((1, 2)), prior)
        assert np.allclose(post.m0, prior.m0)
        assert np.allclose(post.s0, prior.s0)
        assert post.k0 == prior.k0 + 1
        assert post.v0 == prior.v0 + 1

    def test_degenerate_prior_pins_mean(self):
        prior = NiwParams(m0=np.array([3.0, -1.0]), k0=1e12, v0=6.0, s0=np.eye(2))
        post = niw_posterior(np.random.default_rng(1).standard_normal((20, 2)), prior)
        assert np.allclose(post.m0, prior.m0, atol=1e-9)

    def test_posterior_mean_by_monte_carlo(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((30, 2)) + np.array([1.0, -2.0])
        post = niw_posterior(x, self.prior())
        draw_rng = np.random.default_rng(17)
        mus = np.stack([sample_niw(post, draw_rng)[0] for _ in range(100_000)])
        se = mus.std(axis=0) / math.sqrt(len(mus))
        assert np.all(np.abs(mus.mean(axis=0) - post.m0) < 3 * se)

    def test_row_order_exchangeable(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((25, 3))
        prior = self.prior(3)
        a = niw_posterior(x, prior)
        b = niw_posterior(x[rng.permutation(25)], prior)
        assert np.allclose(a.m0, b.m0, atol=1e-10)
        assert np.allclose(a.s0, b.s0, atol=1e-10)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            NiwParams(m0=np.zeros(2), k0=-1.0, v0=5.0, s0=np.eye(2))
        with pytest.raises(ValueError):
            NiwParams(m0=np.zeros(3), v0=1.0, k0=1.0, s0=np.eye(3))


class TestWishartLogNormalizer:
    def test_univariate_reduction(self):
        df = 7.3
        expected = math.lgamma(df / 2.0) + (df / 2.0) * math.log(2.0)
        assert wishart_log_normalizer(df, 1) == pytest.approx(expected, abs=1e-12)

    def test_bivariate_matches_direct_evaluation(self):
        df = 5.0
        direct = (
            0.5 * math.log(math.pi)
            + math.lgamma(df / 2.0)
            + math.lgamma((df - 1.0) / 2.0)
            + df * math.log(2.0)
        )
        assert wishart_log_normalizer(df, 2) == pytest.approx(direct, abs=1e-10)

    def test_monotone_in_df(self):
        grid = np.linspace(4.0, 30.0, 40)
        vals = [wishart_log_normalizer(df, 3) for df in grid]
        assert np.all(np.diff(vals) > 0)

    def test_domain(self):
        with pytest.raises(ValueError):
            wishart_log_normalizer(1.0, 3)

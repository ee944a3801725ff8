import numpy as np
import pytest
from scipy import optimize, special

from doetree import datasets
from doetree.design import dummy_matrix
from doetree.glm import (
    ConvergenceError,
    Family,
    PivotedQR,
    SeparationError,
    aic,
    anova_poisson,
    irls_fit,
    ols_fit,
)


def _mle(X, y, nll):
    res = optimize.minimize(nll, np.zeros(X.shape[1]), method="BFGS", options={"gtol": 1e-10})
    return res.x


class TestPivotedQR:
    def test_full_rank_matches_lstsq(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(30, 5)), rng.normal(size=30)
        np.testing.assert_allclose(PivotedQR(X).solve(y), np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-12)

    def test_aliased_columns_detected_in_order(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(20, 1)), rng.normal(size=(20, 1))
        X = np.hstack([a, b, a + b, 2 * a])
        qr = PivotedQR(X)
        assert qr.rank == 2 and list(qr.aliased) == [2, 3]

    def test_unscaled_covariance(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(25, 4))
        np.testing.assert_allclose(PivotedQR(X).cov_unscaled(), np.linalg.inv(X.T @ X), rtol=1e-10)


class TestOls:
    def test_matches_normal_equations(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
        y = X @ [1.0, 2.0, -1.0, 0.5] + rng.normal(size=40)
        fit = ols_fit(X, y)
        beta = np.linalg.solve(X.T @ X, X.T @ y)
        rss = float(np.sum((y - X @ beta) ** 2))
        se = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * rss / 36)
        np.testing.assert_allclose(fit.coefficients, beta, rtol=1e-10)
        np.testing.assert_allclose(fit.std_errors, se, rtol=1e-10)
        assert fit.dof_residual == 36 and fit.rss_or_deviance == pytest.approx(rss)

    def test_rank_deficient_sets_aliased_to_zero(self):
        X = np.column_stack([np.ones(6), np.arange(6), 2 * np.arange(6)])
        fit = ols_fit(X, np.arange(6) ** 2.0)
        assert fit.aliased == frozenset({2})
        assert fit.coefficients[2] == 0.0 and np.isnan(fit.std_errors[2])
        assert fit.dof_residual == 4


class TestIrls:
    def test_poisson_matches_direct_mle(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([np.ones(60), rng.normal(size=(60, 2))])
        y = rng.poisson(np.exp(X @ [0.5, 0.3, -0.2])).astype(float)

        def nll(b):
            eta = X @ b
            return float(np.sum(np.exp(eta) - y * eta))

        fit = irls_fit(X, y, family="poisson")
        np.testing.assert_allclose(fit.coefficients, _mle(X, y, nll), atol=1e-5)
        mu = np.exp(X @ fit.coefficients)
        se = np.sqrt(np.diag(np.linalg.inv(X.T @ (mu[:, None] * X))))
        np.testing.assert_allclose(fit.std_errors, se, rtol=1e-6)

    def test_binomial_matches_direct_mle(self):
        rng = np.random.default_rng(6)
        X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
        m = rng.integers(5, 30, 40).astype(float)
        y = rng.binomial(m.astype(int), special.expit(X @ [-0.2, 0.8, 0.4])).astype(float)

        def nll(b):
            eta = X @ b
            return float(np.sum(m * np.logaddexp(0, eta) - y * eta))

        fit = irls_fit(X, y, m, "binomial")
        np.testing.assert_allclose(fit.coefficients, _mle(X, y, nll), atol=1e-5)

    def test_deviance_trace_is_monotone(self):
        d = datasets.seed_germination().dataset.alphabetical()
        X, _ = dummy_matrix(d, [frozenset(), frozenset({0}), frozenset({1}), frozenset({2}), frozenset({1, 2})])
        trace = irls_fit(X, d.y, d.n_trials, "binomial").deviance_trace
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_separation_flagged(self):
        X = np.column_stack([np.ones(6), 0.1 * np.array([-1, -1, -1, 1, 1, 1])])
        with pytest.raises(SeparationError):
            irls_fit(X, np.array([0, 0, 0, 1, 1, 1.0]), np.ones(6), "binomial")

    def test_nonconvergence_reported(self):
        d = datasets.seed_germination().dataset.alphabetical()
        X, _ = dummy_matrix(d, [frozenset(), frozenset({1})])
        with pytest.raises(ConvergenceError):
            irls_fit(X, d.y, d.n_trials, "binomial", maxit=1)

    def test_binomial_needs_denominators(self):
        with pytest.raises(ValueError):
            irls_fit(np.ones((3, 1)), np.array([0.0, 1.0, 1.0]), None, "binomial")

    def test_aic_gaussian(self):
        rng = np.random.default_rng(7)
        X = np.column_stack([np.ones(20), rng.normal(size=20)])
        y = rng.normal(size=20)
        fit = ols_fit(X, y)
        n, rss = 20, fit.rss_or_deviance
        # profile log-likelihood at sigma^2 = rss / n; the n log RSS/n
        # convention drops the constant n (1 + log 2 pi)
        ll = -0.5 * n * (np.log(2 * np.pi * rss / n) + 1)
        assert aic(fit) == pytest.approx(-2 * ll + 2 * 3 - n * (1 + np.log(2 * np.pi)), abs=1e-9)

    def test_aic_nested_identity(self):
        # shrinking RSS by exp(-2/n) per added column leaves AIC unchanged
        rng = np.random.default_rng(8)
        n = 16
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        small = ols_fit(X[:, :2], rng.normal(size=n))
        big = ols_fit(X, rng.normal(size=n))
        a_small = aic(small) - n * np.log(small.rss_or_deviance / n)
        a_big = aic(big) - n * np.log(big.rss_or_deviance / n)
        assert a_big - a_small == pytest.approx(2.0)


class TestFamily:
    @pytest.mark.parametrize("kind", ["gaussian", "poisson", "binomial"])
    def test_link_round_trip(self, kind):
        fam = Family.of(kind)
        mu = np.array([0.2, 0.5, 0.7])
        np.testing.assert_allclose(fam.linkinv(fam.linkfun(mu)), mu)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            Family.of("gamma")


def test_anova_poisson_partitions_deviance():
    d = datasets.synthetic_solder(seed=1).dataset
    rows = anova_poisson(d, max_order=1)
    null_dev = Family("poisson").deviance(d.y, np.full(d.n, d.y.mean()))
    assert sum(r.deviance for r in rows) == pytest.approx(null_dev, rel=1e-8)
    assert [r.df for r in rows] == [2, 1, 3, 9, 2, 702]

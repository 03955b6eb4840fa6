"""
Tests for the site-local pipeline
"""

import numpy as np
import pytest

from distheat.core.errors import DimensionError, ValidationError
from distheat.core.linalg import sample_covariance
from distheat.models.site import SiteDataset, SiteState
from distheat.schemas.config import LambdaMode, LambdaRule, LassoConfig
from distheat.services import datagen, site
from distheat.services.lasso import kkt_residual

TIGHT = LassoConfig(coord_tol=1e-12, kkt_tol=1e-10)


def _dataset(n=200, p=5, seed=0, site_id="site_0"):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p, p)) * 0.3
    return SiteDataset(site_id, rng.standard_normal((n, p)) @ (np.eye(p) + a))


def _state_with(omega_hat, cov, residuals=None):
    p = omega_hat.shape[0]
    n = 50 if residuals is None else residuals.shape[0]
    return SiteState(
        site_id="site_0",
        n_m=n,
        centered=np.zeros((n, p)),
        sample_cov=cov,
        gammas=[],
        residuals=np.zeros((n, p)) if residuals is None else residuals,
        omega_hat=omega_hat,
        lambdas=np.ones(p),
    )


class TestFitNodewise:
    def test_two_by_two_recovers_inverse(self):
        """rho=0.5, n=1e5, tiny penalty: entrywise within 0.05 of the closed-form inverse"""
        rho = 0.5
        rng = np.random.default_rng(1)
        raw = rng.multivariate_normal([0.0, 0.0], [[1.0, rho], [rho, 1.0]], size=100_000)
        state = site.fit_nodewise(SiteDataset("site_0", raw), np.full(2, 1e-6), TIGHT)
        truth = np.array([[1.0, -rho], [-rho, 1.0]]) / (1.0 - rho**2)
        np.testing.assert_allclose(state.omega_hat, truth, atol=0.05)

    def test_full_shrinkage_gives_inverse_variances(self):
        rng = np.random.default_rng(2)
        raw = rng.standard_normal((300, 4)) * np.array([1.0, 2.0, 0.5, 3.0])
        state = site.fit_nodewise(SiteDataset("site_0", raw), np.full(4, 100.0))
        for gamma in state.gammas:
            np.testing.assert_array_equal(gamma, 0.0)
        np.testing.assert_allclose(np.diag(state.omega_hat), 1.0 / raw.var(axis=0), rtol=1e-10)
        np.testing.assert_array_equal(state.omega_hat - np.diag(np.diag(state.omega_hat)), 0.0)

    def test_population_regressions(self):
        """gamma_j = -Omega_-j,j / Omega_jj with residual variance 1 / Omega_jj"""
        p = 5
        omega = 2.0 * np.eye(p) + 0.6 * (np.eye(p, k=1) + np.eye(p, k=-1))
        dataset = datagen.sample_gaussian(omega, 10_000, seed=9)
        state = site.fit_nodewise(dataset, np.full(p, 1e-4), TIGHT)
        for j in range(p):
            rest = np.delete(np.arange(p), j)
            np.testing.assert_allclose(state.gammas[j], -omega[rest, j] / omega[j, j], atol=0.05)
            assert np.mean(state.residuals[:, j] ** 2) == pytest.approx(1.0 / omega[j, j], rel=0.05)

    def test_residuals_match_regressions(self):
        dataset = _dataset()
        state = site.fit_nodewise(dataset, site.default_lambdas(dataset.p, dataset.n_m))
        centered = dataset.raw - dataset.raw.mean(axis=0)
        for j in range(dataset.p):
            rest = np.delete(np.arange(dataset.p), j)
            expected = centered[:, j] - centered[:, rest] @ state.gammas[j]
            np.testing.assert_allclose(state.residuals[:, j], expected, atol=1e-12)

    def test_penalty_validation(self):
        dataset = _dataset()
        with pytest.raises(DimensionError):
            site.fit_nodewise(dataset, np.ones(3))
        with pytest.raises(ValidationError):
            site.fit_nodewise(dataset, np.zeros(dataset.p))

    def test_threaded_matches_serial(self):
        dataset = _dataset(p=8)
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        serial = site.fit_nodewise(dataset, lambdas)
        threaded = site.fit_nodewise(dataset, lambdas, n_jobs=4)
        np.testing.assert_array_equal(serial.omega_hat, threaded.omega_hat)

    def test_default_lambda_formula(self):
        np.testing.assert_allclose(site.default_lambdas(100, 400), 0.5 * np.sqrt(np.log(100) / 400))


class TestDebias:
    def test_fixed_point(self):
        """Unpenalized fit on p=5, n=500 is its own debiased version"""
        dataset = _dataset(n=500, p=5, seed=3)
        state = site.fit_nodewise(dataset, np.full(5, 1e-8), TIGHT)
        bar = site.debias(state)
        inverse = np.linalg.inv(state.sample_cov)
        np.testing.assert_allclose(bar, inverse, rtol=1e-6, atol=1e-8)

    def test_zero_input(self):
        state = _state_with(np.zeros((3, 3)), np.eye(3))
        np.testing.assert_array_equal(site.debias(state), 0.0)

    def test_matches_triple_product(self):
        rng = np.random.default_rng(4)
        om = rng.standard_normal((5, 5))
        x = rng.standard_normal((40, 5))
        cov = sample_covariance(x)
        bar = site.debias(_state_with(om, cov))
        expected = om + om.T - om.T @ cov @ om
        np.testing.assert_allclose(bar, expected, atol=1e-12)
        np.testing.assert_array_equal(bar, bar.T)


class TestVariances:
    def test_zero_residuals(self):
        rng = np.random.default_rng(5)
        bar = rng.standard_normal((3, 3))
        bar = bar + bar.T
        state = _state_with(np.eye(3), np.eye(3))
        state.omega_bar = bar
        np.testing.assert_allclose(site.estimate_variances(state), bar**2)

    def test_matches_naive_loops(self):
        """p=3, n=50 against a literal per-sample reference"""
        dataset = _dataset(n=50, p=3, seed=6)
        state = site.fit_nodewise(dataset, site.default_lambdas(3, 50))
        bar = site.debias(state)
        v = site.estimate_variances(state)

        eps = state.residuals
        expected = np.zeros((3, 3))
        for j in range(3):
            for k in range(3):
                total = 0.0
                for i in range(50):
                    phi = bar[j, k] - bar[j, j] * bar[k, k] * eps[i, j] * eps[i, k]
                    total += phi * phi
                expected[j, k] = total / 50
        np.testing.assert_allclose(v, expected, rtol=1e-10)

    def test_gaussian_identity_at_identity_precision(self):
        """v_jk = Omega_jk^2 + Omega_jj Omega_kk: 1 off the diagonal, 2 on it"""
        dataset = datagen.sample_gaussian(np.eye(10), 10_000, seed=8)
        state = site.fit_nodewise(dataset, site.default_lambdas(10, 10_000))
        site.debias(state)
        v = site.estimate_variances(state)
        off = ~np.eye(10, dtype=bool)
        within = np.where(off, np.abs(v - 1.0) <= 0.1, np.abs(v - 2.0) <= 0.2)
        assert within.mean() >= 0.95

    def test_requires_debias(self):
        state = _state_with(np.eye(2), np.eye(2))
        with pytest.raises(ValidationError):
            site.estimate_variances(state)


class TestSplit:
    def test_no_split_limit(self):
        dataset = _dataset()
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        state = site.fit_nodewise(dataset, lambdas)
        site.split_and_refit(dataset, state, 0.0, lambdas)
        np.testing.assert_array_equal(state.split.omega_hat_1, state.omega_hat)
        np.testing.assert_array_equal(state.split.sigma_hat_2, state.sample_cov)
        assert state.kappa_m == 0.0

    def test_half_split_cardinality(self):
        dataset = _dataset(n=200)
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        state = site.fit_nodewise(dataset, lambdas)
        site.split_and_refit(dataset, state, 0.5, lambdas, seed=[0, 3, 0])
        split = state.split
        assert split.index_2.size == 100
        assert split.index_1.size == 100
        assert np.intersect1d(split.index_1, split.index_2).size == 0
        np.testing.assert_array_equal(np.union1d(split.index_1, split.index_2), np.arange(200))
        np.testing.assert_allclose(split.sigma_hat_2, sample_covariance(dataset.raw[split.index_2]))

    def test_refit_part_solves_the_inflated_penalty(self):
        dataset = _dataset(n=200, seed=4)
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        state = site.fit_nodewise(dataset, lambdas, TIGHT)
        site.split_and_refit(dataset, state, 0.5, lambdas, TIGHT, seed=[0, 3, 0])
        split = state.split
        cov_1 = sample_covariance(dataset.raw[split.index_1])
        inflated = lambdas / np.sqrt(0.5)

        at_plain = []
        for j in range(dataset.p):
            rest = np.delete(np.arange(dataset.p), j)
            gamma = -split.omega_hat_1[rest, j] / split.omega_hat_1[j, j]
            gradient = cov_1[rest, j] - cov_1[np.ix_(rest, rest)] @ gamma
            assert kkt_residual(gradient, gamma, inflated[j]) <= 1e-8
            at_plain.append(kkt_residual(gradient, gamma, lambdas[j]))
        assert max(at_plain) > 1e-3

    def test_split_is_seeded(self):
        dataset = _dataset(n=120)
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        a = site.split_and_refit(dataset, site.fit_nodewise(dataset, lambdas), 0.3, lambdas, seed=11)
        b = site.split_and_refit(dataset, site.fit_nodewise(dataset, lambdas), 0.3, lambdas, seed=11)
        np.testing.assert_array_equal(a.split.index_2, b.split.index_2)
        np.testing.assert_array_equal(a.split.omega_hat_1, b.split.omega_hat_1)

    def test_small_subset_rejected(self):
        dataset = _dataset(n=30)
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        state = site.fit_nodewise(dataset, lambdas)
        with pytest.raises(ValidationError):
            site.split_and_refit(dataset, state, 0.9, lambdas)

    def test_kappa_range(self):
        dataset = _dataset()
        lambdas = site.default_lambdas(dataset.p, dataset.n_m)
        state = site.fit_nodewise(dataset, lambdas)
        with pytest.raises(ValidationError):
            site.split_and_refit(dataset, state, 1.0, lambdas)


class TestIterateDebias:
    def setup_method(self):
        self.dataset = _dataset(n=200, p=4, seed=8)
        lambdas = site.default_lambdas(4, 200)
        self.state = site.fit_nodewise(self.dataset, lambdas)
        site.split_and_refit(self.dataset, self.state, 0.5, lambdas, seed=1)

    def test_fixed_point_in_current(self):
        inverse = np.linalg.inv(self.state.split.sigma_hat_2)
        inverse = (inverse + inverse.T) / 2
        np.testing.assert_allclose(site.iterate_debias(self.state, inverse), inverse, atol=1e-10)

    def test_zero_current(self):
        o1 = self.state.split.omega_hat_1
        np.testing.assert_allclose(site.iterate_debias(self.state, np.zeros((4, 4))), (o1 + o1.T) / 2)

    def test_matches_algebra(self):
        rng = np.random.default_rng(9)
        current = rng.standard_normal((4, 4))
        current = current + current.T
        o1 = self.state.split.omega_hat_1
        s2 = self.state.split.sigma_hat_2
        b = o1.T + current - o1.T @ s2 @ current
        np.testing.assert_allclose(site.iterate_debias(self.state, current), (b + b.T) / 2, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            site.iterate_debias(self.state, np.eye(3))

    def test_requires_split(self):
        lambdas = site.default_lambdas(4, 200)
        fresh = site.fit_nodewise(self.dataset, lambdas)
        with pytest.raises(ValidationError):
            site.iterate_debias(fresh, np.eye(4))


def test_summarize_exports_only_matrices_and_counts():
    dataset = _dataset()
    state = site.fit_nodewise(dataset, site.default_lambdas(dataset.p, dataset.n_m))
    site.debias(state)
    site.estimate_variances(state)
    summary = site.summarize(state)
    assert summary.n_m == dataset.n_m
    assert summary.scalar_count() == 2 * dataset.p**2 + 2
    assert set(summary.to_dict()) == {"site_id", "n_m", "kappa_m", "omega_bar", "v_hat"}


def test_holdout_split_sizes():
    dataset = _dataset(n=100)
    fit, cov, n_hold = site.holdout_split(dataset, 0.2, seed=4)
    assert n_hold == 20
    assert fit.n_m == 80
    assert cov.shape == (dataset.p, dataset.p)


def test_cv_penalties_come_from_the_grid():
    dataset = _dataset(n=150, p=4, seed=12)
    rule = LambdaRule(mode=LambdaMode.cv, cv_folds=3, cv_grid_size=5)
    chosen = site.select_lambda_cv(dataset, rule, seed=[0, 5, 0])
    base = site.default_lambdas(4, 150, rule)[0]
    grid = base * np.geomspace(rule.cv_grid_high, rule.cv_grid_low, rule.cv_grid_size)
    assert chosen.shape == (4,)
    for value in chosen:
        assert np.min(np.abs(grid - value)) <= 1e-15 * base
    again = site.select_lambda_cv(dataset, rule, seed=[0, 5, 0])
    np.testing.assert_array_equal(chosen, again)

"""
Tests for coordinator-side aggregation and shrinkage levels
"""

import math

import numpy as np
import pytest

from distheat.core.errors import DimensionError, ValidationError
from distheat.core.linalg import symmetrize
from distheat.models.site import LocalSummary
from distheat.schemas.config import LevelScalingConfig, ShrinkageConfig, ThresholdRule
from distheat.services import aggregate
from distheat.services.threshold import apply_multi, apply_uni

HARD = ShrinkageConfig(rule1=ThresholdRule(family="hard"), rule2=ThresholdRule(family="hard"))
SOFT = ShrinkageConfig(rule1=ThresholdRule(family="soft"), rule2=ThresholdRule(family="soft"))


def _summary(site_id, n, bar, v=None, kappa=0.0):
    bar = np.asarray(bar, dtype=np.float64)
    if bar.ndim == 0:
        bar = np.full((2, 2), float(bar))
    v = np.ones_like(bar) if v is None else np.asarray(v, dtype=np.float64)
    return LocalSummary(site_id, n, bar, v, kappa)


def _random_summaries(M, p, seed, sizes=None, kappa=0.0):
    rng = np.random.default_rng(seed)
    sizes = sizes or [int(s) for s in rng.integers(80, 300, size=M)]
    out = []
    for m in range(M):
        bar = symmetrize(rng.standard_normal((p, p)) * 0.2) + np.eye(p)
        v = symmetrize(rng.uniform(0.5, 2.0, size=(p, p)))
        out.append(LocalSummary(f"site_{m}", sizes[m], bar, v, kappa))
    return out


class TestPooledAverage:
    def test_singleton(self):
        bar = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(aggregate.pooled_average([_summary("site_0", 50, bar)]), bar)

    def test_cancellation(self):
        a = np.array([[1.0, 2.0], [2.0, 1.0]])
        pooled = aggregate.pooled_average([_summary("site_0", 100, a), _summary("site_1", 100, -a)])
        np.testing.assert_allclose(pooled, 0.0)

    def test_weighted_mean(self):
        pooled = aggregate.pooled_average([_summary("site_0", 100, 1.0), _summary("site_1", 300, 5.0)])
        np.testing.assert_allclose(pooled, 4.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            aggregate.pooled_average([_summary("site_0", 100, np.eye(2)), _summary("site_1", 100, np.eye(3))])

    def test_duplicate_sites(self):
        with pytest.raises(ValidationError):
            aggregate.pooled_average([_summary("site_0", 100, 1.0), _summary("site_0", 100, 1.0)])

    def test_natural_site_order(self):
        summaries = [_summary(f"site_{m}", 50 + m, float(m)) for m in (10, 2, 1)]
        pooled = aggregate.PooledInputs(summaries)
        assert pooled.site_ids == ["site_1", "site_2", "site_10"]


class TestRoundOneLevels:
    def test_unit_variances(self):
        """v = 1 everywhere, equal n, C-bar = 0"""
        M, p, n = 4, 6, 100
        summaries = [_summary(f"site_{m}", n, np.eye(p)) for m in range(M)]
        delta = 0.1
        levels1, levels2 = aggregate.shrinkage_levels_round1(summaries, ShrinkageConfig(delta=delta))
        N, log_p = M * n, math.log(p)
        np.testing.assert_allclose(levels1, (2 + delta) * math.sqrt(log_p / N))
        expected2 = (1 + delta) * math.sqrt(
            (M + 2 * math.sqrt(2) * math.sqrt(M * log_p) + 4 * log_p) / N
        )
        np.testing.assert_allclose(levels2, expected2)

    def test_levels_shrink_with_sample_size(self):
        small = [_summary(f"site_{m}", 100, np.eye(3)) for m in range(3)]
        large = [_summary(f"site_{m}", 400, np.eye(3)) for m in range(3)]
        l1_small, l2_small = aggregate.shrinkage_levels_round1(small)
        l1_large, l2_large = aggregate.shrinkage_levels_round1(large)
        assert np.all(l1_large < l1_small)
        assert np.all(l2_large < l2_small)

    def test_higher_order_terms_add(self):
        summaries = [_summary(f"site_{m}", 100 * (m + 1), np.eye(3)) for m in range(2)]
        base1, base2 = aggregate.shrinkage_levels_round1(summaries)
        config = ShrinkageConfig(C1_bar=1.0, C2_bar=2.0, s0_hint=3)
        l1, l2 = aggregate.shrinkage_levels_round1(summaries, config)
        M, N, log_p = 2, 300.0, math.log(3)
        np.testing.assert_allclose(l1 - base1, 3 * M * log_p / N)
        np.testing.assert_allclose(l2 - base2, 2.0 * math.sqrt(M) * 3 * log_p / math.sqrt(100 * N))

    def test_variance_floor(self):
        p = 3
        summaries = [_summary("site_0", 100, np.eye(p), v=np.zeros((p, p)))]
        levels1, levels2 = aggregate.shrinkage_levels_round1(summaries)
        assert np.all(levels1 > 0)
        assert np.all(np.isfinite(levels2))

    def test_s0_required_with_constants(self):
        with pytest.raises(ValueError):
            ShrinkageConfig(C1_bar=1.0)


class TestIterationLevels:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.v = np.stack([symmetrize(rng.uniform(0.5, 2.0, size=(4, 4))) for _ in range(3)])
        self.sizes = np.array([100.0, 200.0, 300.0])

    def test_zero_constants_are_round_independent(self):
        kappas = [0.5, 0.5, 0.5]
        a = aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, kappas, self.sizes, t=2)
        b = aggregate.shrinkage_levels_iter(np.full((4, 4), 9.0), np.zeros((4, 4)), self.v, kappas, self.sizes, t=7)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_unit_kappa_recovers_round_one_term(self):
        summaries = [LocalSummary(f"site_{m}", int(self.sizes[m]), np.eye(4), self.v[m]) for m in range(3)]
        round1, round1_het = aggregate.shrinkage_levels_round1(summaries)
        it1, it2 = aggregate.shrinkage_levels_iter(round1, round1_het, self.v, [1.0, 1.0, 1.0], self.sizes)
        np.testing.assert_allclose(it1, round1, rtol=1e-12)
        np.testing.assert_allclose(it2, round1_het, rtol=1e-12)

    def test_smaller_kappa_raises_levels(self):
        half = aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, [0.5] * 3, self.sizes)
        full = aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, [1.0] * 3, self.sizes)
        assert np.all(half[0] > full[0])
        assert np.all(half[1] > full[1])

    def test_carry_term_uses_previous_levels(self):
        config = ShrinkageConfig(C1_tilde=1.0, C2_tilde=1.0, s0_hint=2)
        low = aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, [0.5] * 3, self.sizes, config)
        high = aggregate.shrinkage_levels_iter(np.full((4, 4), 2.0), np.ones((4, 4)), self.v, [0.5] * 3, self.sizes, config)
        carry = 2 * math.sqrt(math.log(4) / 100.0) * 1.0
        np.testing.assert_allclose(high[0] - low[0], carry)
        np.testing.assert_allclose(high[1] - low[1], carry)

    def test_nonpositive_kappa_rejected(self):
        with pytest.raises(ValidationError):
            aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, [0.0, 0.5, 0.5], self.sizes)

    def test_round_must_follow_first(self):
        with pytest.raises(ValidationError):
            aggregate.shrinkage_levels_iter(np.ones((4, 4)), np.ones((4, 4)), self.v, [0.5] * 3, self.sizes, t=1)

    def test_effective_kappas(self):
        np.testing.assert_array_equal(aggregate.effective_kappas([0.0, 0.3]), [1.0, 0.3])


class TestHeat:
    def test_homogeneous_inputs(self):
        bar = np.array([[2.0, 0.8, 0.0], [0.8, 2.0, 0.5], [0.0, 0.5, 2.0]])
        summaries = [_summary(f"site_{m}", 100 + 50 * m, bar, v=np.full((3, 3), 0.1)) for m in range(3)]
        est = aggregate.heat(summaries)
        np.testing.assert_array_equal(est.lambda_hats, 0.0)
        for m in range(3):
            np.testing.assert_array_equal(est.omega_tildes[m], est.gamma_hat)

    def test_full_shrinkage(self):
        summaries = _random_summaries(3, 4, seed=1)
        est = aggregate.heat(summaries, level_scale=1e6)
        np.testing.assert_array_equal(est.omega_tildes, 0.0)

    def test_single_site(self):
        summaries = _random_summaries(1, 4, seed=2)
        est = aggregate.heat(summaries, SOFT)
        np.testing.assert_array_equal(est.lambda_hats, 0.0)
        expected = np.vectorize(lambda x, lam: apply_uni(ThresholdRule(family="soft"), x, lam))(
            summaries[0].omega_bar, est.levels1
        )
        np.testing.assert_allclose(est.gamma_hat, expected)

    def test_matches_per_entry_reference(self):
        """M=3, p=4 against a literal j, k, m loop"""
        summaries = _random_summaries(3, 4, seed=3)
        est = aggregate.heat(summaries, SOFT, level_scale=0.05)
        weights = np.array([s.n_m for s in summaries], dtype=float)
        weights /= weights.sum()
        rule = ThresholdRule(family="soft")

        for j in range(4):
            for k in range(4):
                entries = np.array([s.omega_bar[j, k] for s in summaries])
                pooled = float(np.sum(weights * entries))
                assert est.gamma_hat[j, k] == pytest.approx(apply_uni(rule, pooled, est.levels1[j, k]), abs=1e-12)
                deviations = apply_multi(rule, entries - pooled, est.levels2[j, k], weights)
                for m in range(3):
                    assert est.lambda_hats[m, j, k] == pytest.approx(deviations[m], abs=1e-12)

    def test_identification_and_symmetry(self):
        summaries = _random_summaries(4, 5, seed=4)
        est = aggregate.heat(summaries, level_scale=0.1)
        assert est.identification_residual() <= 1e-8
        assert est.max_asymmetry() == 0.0

    def test_permutation_invariance(self):
        summaries = _random_summaries(4, 5, seed=5)
        forward = aggregate.heat(summaries, level_scale=0.1)
        backward = aggregate.heat(summaries[::-1], level_scale=0.1)
        np.testing.assert_array_equal(forward.omega_tildes, backward.omega_tildes)
        assert forward.site_ids == backward.site_ids

    def test_level_scale_recorded(self):
        est = aggregate.heat(_random_summaries(2, 3, seed=6), level_scale=0.5)
        assert est.metadata["level_scale"] == 0.5


class TestIteheatRound:
    def setup_method(self):
        self.summaries = _random_summaries(2, 3, seed=7, sizes=[120, 180], kappa=0.5)
        self.first = aggregate.heat(self.summaries, SOFT, level_scale=0.05)

    def test_matches_reference(self):
        rng = np.random.default_rng(8)
        uploads = [(s.site_id, symmetrize(rng.standard_normal((3, 3)))) for s in self.summaries]
        est = aggregate.iteheat_round(self.first, uploads, self.summaries, SOFT, level_scale=0.05)
        assert est.round == 2

        weights = np.array([120.0, 180.0]) / 300.0
        rule = ThresholdRule(family="soft")
        bars = np.stack([bar for _, bar in uploads])
        for j in range(3):
            for k in range(3):
                pooled = float(np.sum(weights * bars[:, j, k]))
                assert est.gamma_hat[j, k] == pytest.approx(apply_uni(rule, pooled, est.levels1[j, k]), abs=1e-12)
                deviations = apply_multi(rule, bars[:, j, k] - pooled, est.levels2[j, k], weights)
                np.testing.assert_allclose(est.lambda_hats[:, j, k], deviations, atol=1e-12)

    def test_noiseless_uploads_recovered_exactly(self):
        truth = [
            np.array([[2.0, 0.6, 0.0], [0.6, 2.0, 0.4], [0.0, 0.4, 2.0]]),
            np.array([[2.0, 0.6, 0.0], [0.6, 2.0, -0.4], [0.0, -0.4, 2.0]]),
        ]
        uploads = [("site_0", truth[0]), ("site_1", truth[1])]
        est = aggregate.iteheat_round(self.first, uploads, self.summaries, HARD, level_scale=1e-6)
        np.testing.assert_allclose(est.omega_tildes, np.stack(truth), atol=1e-12)

    def test_homogeneous_uploads(self):
        bar = np.eye(3) * 2.0
        est = aggregate.iteheat_round(self.first, [("site_0", bar), ("site_1", bar)], self.summaries)
        np.testing.assert_array_equal(est.lambda_hats, 0.0)

    def test_unknown_site_rejected(self):
        with pytest.raises(ValidationError):
            aggregate.iteheat_round(self.first, [("site_0", np.eye(3)), ("site_9", np.eye(3))], self.summaries)


class TestLevelScaling:
    def test_non_positive_definite_scores_infinite(self):
        bad = np.stack([np.array([[1.0, 2.0], [2.0, 1.0]])])
        assert aggregate.holdout_score(bad, [np.eye(2)], np.array([1.0])) == float("inf")

    def test_identity_score(self):
        score = aggregate.holdout_score(np.stack([np.eye(3)]), [np.eye(3)], np.array([1.0]))
        assert score == pytest.approx(3.0)

    def test_selects_best_candidate(self):
        truth = np.array([[2.0, 0.5], [0.5, 1.0]])
        cov = np.linalg.inv(truth)

        def build(scale):
            return np.stack([truth * scale])

        scale, scores = aggregate.select_level_scale(build, [cov], [50], [0.5, 1.0, 2.0])
        assert scale == 1.0
        assert len(scores) == 3

    def test_falls_back_when_nothing_is_positive_definite(self):
        scale, _ = aggregate.select_level_scale(
            lambda c: np.stack([-np.eye(2) * c]), [np.eye(2)], [20], [0.5, 2.0]
        )
        assert scale == 1.0


class TestHeatAggregator:
    def test_unscaled_rounds_match_functions(self):
        summaries = _random_summaries(3, 4, seed=31, kappa=0.5)
        aggregator = aggregate.HeatAggregator(SOFT)
        first = aggregator.round1(summaries)
        np.testing.assert_array_equal(first.omega_tildes, aggregate.heat(summaries, SOFT).omega_tildes)

        uploads = [(s.site_id, s.omega_bar) for s in summaries]
        second = aggregator.iterate(first, uploads, summaries)
        expected = aggregate.iteheat_round(first, uploads, summaries, SOFT)
        np.testing.assert_array_equal(second.omega_tildes, expected.omega_tildes)
        assert "level_scale_heuristic" not in second.metadata

    def test_scaled_round_records_choice(self):
        summaries = _random_summaries(2, 3, seed=32)
        aggregator = aggregate.HeatAggregator(SOFT, LevelScalingConfig(enabled=True, grid=[0.5, 1.0]))
        for s in summaries:
            aggregator.add_holdout(s.site_id, 40, np.linalg.inv(s.omega_bar))
        estimate = aggregator.round1(summaries)
        assert estimate.metadata["level_scale_heuristic"] is True
        assert estimate.metadata["level_scale"] in (0.5, 1.0)
        assert len(estimate.metadata["level_scale_scores"]) == 2

    def test_scaling_without_holdouts(self):
        aggregator = aggregate.HeatAggregator(SOFT, LevelScalingConfig(enabled=True))
        with pytest.raises(ValidationError):
            aggregator.round1(_random_summaries(2, 3, seed=33))

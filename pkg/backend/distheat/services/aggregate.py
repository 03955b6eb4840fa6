"""
Coordinator-side integration.

Site summaries are pooled with weights n_m / N, then the pooled matrix and the
per-site deviations from it are thresholded at entry-adaptive levels derived
from the uploaded influence-function variances.
"""

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import LinAlgError, cho_factor

from distheat.core.errors import DimensionError, DistHeatError, ValidationError
from distheat.core.linalg import (
    weighted_l1_entrywise,
    weighted_sum,
    weights_from_sizes,
)
from distheat.models.estimate import HeatEstimate
from distheat.models.site import LocalSummary, site_sort_key
from distheat.schemas.config import LevelScalingConfig, ShrinkageConfig
from distheat.services.threshold import radial_threshold, threshold_array

logger = structlog.get_logger(__name__)

VARIANCE_FLOOR = 1e-12
IDENTIFICATION_TOL = 1e-8


class PooledInputs:
    """Summaries stacked in site-id order"""

    def __init__(self, summaries: Sequence[LocalSummary]):
        if len(summaries) == 0:
            raise ValidationError("at least one site summary is required")
        ordered = sorted(summaries, key=lambda s: site_sort_key(s.site_id))
        p = ordered[0].p
        for s in ordered:
            if s.p != p:
                raise DimensionError(f"site {s.site_id} has p={s.p}, expected {p}")
        ids = [s.site_id for s in ordered]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate site ids in summaries")

        self.site_ids = ids
        self.sample_sizes = np.array([s.n_m for s in ordered], dtype=np.float64)
        self.weights = weights_from_sizes(self.sample_sizes)
        self.bars = np.stack([s.omega_bar for s in ordered])
        self.variances = np.stack([s.v_hat for s in ordered])
        self.kappas = np.array([s.kappa_m for s in ordered])
        self.p = p

    @property
    def M(self) -> int:
        return len(self.site_ids)

    @property
    def N(self) -> float:
        return float(self.sample_sizes.sum())

    @property
    def n_min(self) -> float:
        return float(self.sample_sizes.min())


def pooled_average(summaries: Sequence[LocalSummary]) -> np.ndarray:
    """sum_m (n_m / N) Omega-bar^(m)"""
    pooled = PooledInputs(summaries)
    return weighted_sum(pooled.bars, pooled.weights)


def _floored_variances(variances: np.ndarray) -> np.ndarray:
    low = variances < VARIANCE_FLOOR
    if np.any(low):
        logger.warning(
            "Variance entries floored", count=int(low.sum()), floor=VARIANCE_FLOOR
        )
        return np.where(low, VARIANCE_FLOOR, variances)
    return variances


def _heterogeneity_level(b1, b2, binf, log_p, N, delta):
    """(1+delta) sqrt((B1 + 2 sqrt2 B2 sqrt(log p) + 4 Binf log p) / N)"""
    inner = b1 + 2.0 * math.sqrt(2.0) * b2 * math.sqrt(log_p) + 4.0 * binf * log_p
    return (1.0 + delta) * np.sqrt(inner / N)


def _round1_levels(
    pooled: PooledInputs, config: ShrinkageConfig
) -> Tuple[np.ndarray, np.ndarray]:
    v = _floored_variances(pooled.variances)
    M, N, log_p = pooled.M, pooled.N, math.log(pooled.p)
    s0 = config.s0()

    levels1 = (2.0 + config.delta) * np.sqrt(
        weighted_l1_entrywise(v, pooled.weights) * log_p / N
    )
    levels1 = levels1 + config.C1_bar * s0 * M * log_p / N

    b1 = np.zeros_like(v[0])
    b2 = np.zeros_like(v[0])
    for m in range(M):
        b1 += v[m]
        b2 += v[m] * v[m]
    levels2 = _heterogeneity_level(b1, np.sqrt(b2), v.max(axis=0), log_p, N, config.delta)
    levels2 = levels2 + config.C2_bar * math.sqrt(M) * s0 * log_p / math.sqrt(pooled.n_min * N)
    return levels1, levels2


def shrinkage_levels_round1(
    summaries: Sequence[LocalSummary], config: Optional[ShrinkageConfig] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """First-round levels for the common part (levels1) and heterogeneity (levels2)"""
    return _round1_levels(PooledInputs(summaries), config or ShrinkageConfig())


def effective_kappas(kappas: Sequence[float]) -> np.ndarray:
    """No-split sites (kappa_m = 0) enter the iteration levels as kappa_m = 1"""
    k = np.asarray(kappas, dtype=np.float64)
    return np.where(k == 0.0, 1.0, k)


def shrinkage_levels_iter(
    prev_levels1: np.ndarray,
    prev_levels2: np.ndarray,
    variances: np.ndarray,
    kappas: Sequence[float],
    sample_sizes: Sequence[float],
    config: Optional[ShrinkageConfig] = None,
    t: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """Levels for round t >= 2"""
    config = config or ShrinkageConfig()
    if t < 2:
        raise ValidationError(f"iteration levels start at t=2, got t={t}")
    kappas = np.asarray(kappas, dtype=np.float64)
    if np.any(kappas <= 0.0) or np.any(kappas > 1.0):
        raise ValidationError("kappa_m must lie in (0, 1] for iteration levels")
    sizes = np.asarray(sample_sizes, dtype=np.float64)
    v = _floored_variances(np.asarray(variances, dtype=np.float64))
    M, p = v.shape[0], v.shape[1]
    if kappas.shape != (M,) or sizes.shape != (M,):
        raise DimensionError("kappas and sample sizes must have one entry per site")

    N, n, log_p = float(sizes.sum()), float(sizes.min()), math.log(p)
    s0 = config.s0()

    a = np.zeros((p, p))
    b1 = np.zeros((p, p))
    b2 = np.zeros((p, p))
    for m in range(M):
        scaled = v[m] / kappas[m]
        a += sizes[m] / (kappas[m] * N) * v[m]
        b1 += scaled
        b2 += scaled * scaled
    binf = (v / kappas[:, None, None]).max(axis=0)

    carry = s0 * math.sqrt(log_p / n) * (float(prev_levels1.max()) + float(prev_levels2.max()))
    levels1 = (2.0 + config.delta) * np.sqrt(a * log_p / N)
    levels1 = levels1 + config.C1_tilde * (M * log_p / N + carry)
    levels2 = _heterogeneity_level(b1, np.sqrt(b2), binf, log_p, N, config.delta)
    levels2 = levels2 + config.C2_tilde * (math.sqrt(M) * log_p / math.sqrt(n * N) + carry)
    return levels1, levels2


def double_threshold(
    bars: np.ndarray,
    weights: np.ndarray,
    levels1: np.ndarray,
    levels2: np.ndarray,
    config: ShrinkageConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gamma-hat = T1(pooled), Lambda-hat = T2(site deviations from pooled)"""
    pooled = weighted_sum(bars, weights)
    gamma_hat = threshold_array(config.rule1, pooled, levels1)
    lambda_hats = radial_threshold(config.rule2, bars - pooled[None, :, :], levels2, weights)
    return gamma_hat, lambda_hats


def _build_estimate(
    pooled: PooledInputs,
    bars: np.ndarray,
    levels1: np.ndarray,
    levels2: np.ndarray,
    config: ShrinkageConfig,
    round: int,
    level_scale: float,
) -> HeatEstimate:
    levels1 = levels1 * level_scale
    levels2 = levels2 * level_scale
    gamma_hat, lambda_hats = double_threshold(bars, pooled.weights, levels1, levels2, config)
    estimate = HeatEstimate(
        gamma_hat=gamma_hat,
        lambda_hats=lambda_hats,
        levels1=levels1,
        levels2=levels2,
        weights=pooled.weights,
        site_ids=pooled.site_ids,
        round=round,
        metadata={"level_scale": level_scale},
    )
    residual = estimate.identification_residual()
    if residual > IDENTIFICATION_TOL:
        raise DistHeatError(f"identification constraint violated by {residual:.3g}")
    return estimate


def heat(
    summaries: Sequence[LocalSummary],
    config: Optional[ShrinkageConfig] = None,
    level_scale: float = 1.0,
) -> HeatEstimate:
    """One-shot aggregation and double thresholding"""
    config = config or ShrinkageConfig()
    pooled = PooledInputs(summaries)
    levels1, levels2 = _round1_levels(pooled, config)
    estimate = _build_estimate(pooled, pooled.bars, levels1, levels2, config, 1, level_scale)
    logger.info("Aggregation round complete", round=1, M=pooled.M, p=pooled.p, **estimate.support_counts())
    return estimate


def iteheat_round(
    prev: HeatEstimate,
    iter_summaries: Sequence[Tuple[str, np.ndarray]],
    summaries: Sequence[LocalSummary],
    config: Optional[ShrinkageConfig] = None,
    level_scale: float = 1.0,
) -> HeatEstimate:
    """
    One refinement round.

    ``iter_summaries`` holds (site_id, Omega-bar^(m,t)); ``summaries`` supplies
    the first-round variances, kappas and sample sizes.
    """
    config = config or ShrinkageConfig()
    pooled = PooledInputs(summaries)
    by_site: Dict[str, np.ndarray] = {}
    for site_id, bar in iter_summaries:
        by_site[str(site_id)] = np.asarray(bar, dtype=np.float64)
    if sorted(by_site, key=site_sort_key) != pooled.site_ids:
        raise ValidationError("iteration uploads do not match the summarized sites")
    bars = np.stack([by_site[s] for s in pooled.site_ids])
    if bars.shape[1:] != (pooled.p, pooled.p):
        raise DimensionError(f"iteration uploads have shape {bars.shape[1:]}")

    t = prev.round + 1
    levels1, levels2 = shrinkage_levels_iter(
        prev.levels1,
        prev.levels2,
        pooled.variances,
        effective_kappas(pooled.kappas),
        pooled.sample_sizes,
        config,
        t,
    )
    estimate = _build_estimate(pooled, bars, levels1, levels2, config, t, level_scale)
    logger.info("Aggregation round complete", round=t, M=pooled.M, p=pooled.p, **estimate.support_counts())
    return estimate


def holdout_score(
    omega_tildes: np.ndarray, holdout_covs: Sequence[np.ndarray], weights: np.ndarray
) -> float:
    """sum_m w_m (tr(S_m Omega_m) - log det Omega_m); +inf when any Omega_m is not PD"""
    score = 0.0
    for m, cov in enumerate(holdout_covs):
        omega = omega_tildes[m]
        try:
            factor, _ = cho_factor(omega, lower=True, check_finite=True)
        except LinAlgError:
            return float("inf")
        logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
        score += weights[m] * (float(np.sum(cov * omega)) - logdet)
    return score


def select_level_scale(
    build: Callable[[float], np.ndarray],
    holdout_covs: Sequence[np.ndarray],
    holdout_sizes: Sequence[int],
    grid: Sequence[float],
) -> Tuple[float, List[float]]:
    """
    Choose a global level multiplier by held-out likelihood.

    ``build(scale)`` returns the M x p x p stack of integrated estimates at that
    multiplier. Ties keep the smallest multiplier; if no candidate is positive
    definite the multiplier stays at 1.
    """
    weights = weights_from_sizes(holdout_sizes)
    scores = [holdout_score(build(scale), holdout_covs, weights) for scale in grid]
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        logger.warning("No positive definite candidate for level scaling; keeping 1.0")
        return 1.0, scores
    logger.info("Level scale selected", scale=float(grid[best]), score=scores[best])
    return float(grid[best]), scores


class HeatAggregator:
    """Coordinator-side rounds under one shrinkage and level-scaling setup"""

    def __init__(
        self,
        shrinkage: Optional[ShrinkageConfig] = None,
        level_scaling: Optional[LevelScalingConfig] = None,
    ):
        self.shrinkage = shrinkage or ShrinkageConfig()
        self.level_scaling = level_scaling or LevelScalingConfig()
        self.holdouts: Dict[str, Tuple[int, np.ndarray]] = {}

    def add_holdout(self, site_id: str, n_holdout: int, sigma_holdout: np.ndarray) -> None:
        self.holdouts[str(site_id)] = (int(n_holdout), np.asarray(sigma_holdout, dtype=np.float64))

    def _scaled(self, build: Callable[[float], HeatEstimate]) -> HeatEstimate:
        if not self.level_scaling.enabled:
            return build(1.0)
        if not self.holdouts:
            raise ValidationError("level scaling is enabled but no site held out rows")
        order = sorted(self.holdouts, key=site_sort_key)
        scale, scores = select_level_scale(
            lambda c: build(c).omega_tildes,
            [self.holdouts[s][1] for s in order],
            [self.holdouts[s][0] for s in order],
            self.level_scaling.grid,
        )
        estimate = build(scale)
        estimate.metadata.update(
            {
                "level_scale_heuristic": True,
                "level_scale_grid": list(self.level_scaling.grid),
                "level_scale_scores": scores,
            }
        )
        return estimate

    def round1(self, summaries: Sequence[LocalSummary]) -> HeatEstimate:
        return self._scaled(lambda c: heat(summaries, self.shrinkage, c))

    def iterate(
        self,
        prev: HeatEstimate,
        iter_summaries: Sequence[Tuple[str, np.ndarray]],
        summaries: Sequence[LocalSummary],
    ) -> HeatEstimate:
        return self._scaled(lambda c: iteheat_round(prev, iter_summaries, summaries, self.shrinkage, c))

"""
Site-local pipeline: node-wise regressions, debiasing, influence-function
variances, sample splitting and iterative symmetrized debiasing.

Nothing in this module sees more than one site's rows.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from joblib import Parallel, delayed

from distheat.core.errors import DimensionError, ValidationError
from distheat.core.linalg import center, sample_covariance, symmetrize
from distheat.models.site import (
    MIN_SITE_SAMPLES,
    LocalSummary,
    SiteDataset,
    SiteState,
    SplitState,
)
from distheat.schemas.config import LambdaMode, LambdaRule, LassoConfig
from distheat.services.lasso import solve_gram

logger = structlog.get_logger(__name__)

DENOMINATOR_FLOOR = 1e-10
DEBIAS_SYMMETRY_TOL = 1e-8

Seed = Union[int, Sequence[int]]


def default_lambdas(p: int, n_m: int, rule: Optional[LambdaRule] = None) -> np.ndarray:
    """c_lambda * sqrt(log(p) / n_m), uniform over columns"""
    rule = rule or LambdaRule()
    return np.full(p, rule.c_lambda * np.sqrt(np.log(p) / n_m))


def _check_lambdas(lambda_j: np.ndarray, p: int) -> np.ndarray:
    lambda_j = np.asarray(lambda_j, dtype=np.float64)
    if lambda_j.shape != (p,):
        raise DimensionError(f"expected {p} penalties, got shape {lambda_j.shape}")
    if np.any(lambda_j <= 0) or not np.all(np.isfinite(lambda_j)):
        raise ValidationError("node-wise penalties must be positive and finite")
    return lambda_j


def _column_lasso(cov: np.ndarray, j: int, penalty: float, config: LassoConfig):
    rest = np.delete(np.arange(cov.shape[0]), j)
    return solve_gram(
        cov[np.ix_(rest, rest)],
        cov[rest, j],
        penalty,
        config=config,
        yy_half=cov[j, j] / 2.0,
    )


def _assemble(
    site_id: str,
    raw: np.ndarray,
    lambda_j: np.ndarray,
    config: LassoConfig,
    n_jobs: int,
) -> SiteState:
    n, p = raw.shape
    centered = center(raw)
    cov = sample_covariance(raw)

    solutions = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_column_lasso)(cov, j, lambda_j[j], config) for j in range(p)
    )

    warnings = []
    gammas = []
    omega_hat = np.zeros((p, p))
    coef = np.eye(p)
    for j, solution in enumerate(solutions):
        rest = np.delete(np.arange(p), j)
        gamma = solution.coefficients
        gammas.append(gamma)
        if not solution.converged:
            warnings.append(f"lasso column {j} did not converge (kkt={solution.kkt:.3g})")

        # X_j^T (X_j - X_-j gamma) / n
        denom = cov[j, j] - cov[j, rest] @ gamma
        if denom <= DENOMINATOR_FLOOR:
            warnings.append(f"column {j} denominator {denom:.3g} floored")
            logger.warning(
                "Node-wise denominator floored", site_id=site_id, column=j, value=float(denom)
            )
            denom = DENOMINATOR_FLOOR
        omega_hat[j, j] = 1.0 / denom
        omega_hat[rest, j] = -gamma * omega_hat[j, j]
        coef[rest, j] = -gamma

    state = SiteState(
        site_id=site_id,
        n_m=n,
        centered=centered,
        sample_cov=cov,
        gammas=gammas,
        residuals=centered @ coef,
        omega_hat=omega_hat,
        lambdas=lambda_j,
    )
    state.warnings.extend(warnings)
    return state


def fit_nodewise(
    dataset: SiteDataset,
    lambda_j: np.ndarray,
    config: Optional[LassoConfig] = None,
    n_jobs: int = 1,
) -> SiteState:
    """Center, run p node-wise Lasso regressions and assemble Omega-hat"""
    lambda_j = _check_lambdas(lambda_j, dataset.p)
    state = _assemble(dataset.site_id, dataset.raw, lambda_j, config or LassoConfig(), n_jobs)
    logger.debug(
        "Node-wise fit complete",
        site_id=dataset.site_id,
        n_m=dataset.n_m,
        p=dataset.p,
        warnings=len(state.warnings),
    )
    return state


def select_lambda_cv(
    dataset: SiteDataset,
    rule: Optional[LambdaRule] = None,
    config: Optional[LassoConfig] = None,
    seed: Seed = 0,
) -> np.ndarray:
    """Per-column K-fold choice of the penalty on a geometric grid around the default"""
    rule = rule or LambdaRule(mode=LambdaMode.cv)
    config = config or LassoConfig()
    n, p = dataset.raw.shape
    if n // rule.cv_folds < 2:
        raise ValidationError(
            f"site {dataset.site_id}: {n} samples is too few for {rule.cv_folds} folds"
        )

    base = default_lambdas(p, n, rule)[0]
    # Descending so each solve warm-starts from a sparser solution
    grid = base * np.geomspace(rule.cv_grid_high, rule.cv_grid_low, rule.cv_grid_size)
    folds = np.array_split(np.random.default_rng(seed).permutation(n), rule.cv_folds)

    errors = np.zeros((p, grid.size))
    for test_idx in folds:
        train_mask = np.ones(n, dtype=bool)
        train_mask[test_idx] = False
        train = dataset.raw[train_mask]
        mean = train.mean(axis=0, keepdims=True)
        cov = sample_covariance(train)
        test = dataset.raw[test_idx] - mean

        for j in range(p):
            rest = np.delete(np.arange(p), j)
            gram = cov[np.ix_(rest, rest)]
            corr = cov[rest, j]
            warm = None
            for g, penalty in enumerate(grid):
                solution = solve_gram(gram, corr, penalty, config=config, init=warm)
                warm = solution.coefficients
                resid = test[:, j] - test[:, rest] @ warm
                errors[j, g] += float(resid @ resid) / n

    chosen = grid[np.argmin(errors, axis=1)]
    logger.info(
        "Cross-validated penalties selected",
        site_id=dataset.site_id,
        median_multiplier=float(np.median(chosen / base)),
    )
    return chosen


def site_lambdas(
    dataset: SiteDataset,
    rule: LambdaRule,
    config: LassoConfig,
    seed: Seed = 0,
) -> np.ndarray:
    if rule.mode == LambdaMode.cv:
        return select_lambda_cv(dataset, rule, config, seed)
    return default_lambdas(dataset.p, dataset.n_m, rule)


def debias(state: SiteState) -> np.ndarray:
    """Omega-bar = Omega-hat + Omega-hat^T - Omega-hat^T Sigma-hat Omega-hat"""
    om = state.omega_hat
    bar = om + om.T - om.T @ state.sample_cov @ om
    asym = float(np.max(np.abs(bar - bar.T)))
    if asym > DEBIAS_SYMMETRY_TOL * max(1.0, float(np.max(np.abs(bar)))):
        raise ValidationError(f"debiased estimate at site {state.site_id} is not symmetric ({asym:.3g})")
    bar = symmetrize(bar)
    state.omega_bar = bar
    return bar


def estimate_variances(state: SiteState) -> np.ndarray:
    """v-hat_jk = mean_i phi_ijk^2 with phi_ijk = Obar_jk - Obar_jj Obar_kk e_ij e_ik"""
    if state.omega_bar is None:
        raise ValidationError("debias must run before estimate_variances")
    bar = state.omega_bar
    diag = np.diag(bar)
    eps = state.residuals
    p = bar.shape[0]

    v = np.empty((p, p))
    for j in range(p):
        phi = bar[j][None, :] - (diag[j] * diag)[None, :] * (eps[:, j : j + 1] * eps)
        v[j] = np.mean(phi * phi, axis=0)
    v = symmetrize(v)
    state.v_hat = v
    return v


def split_and_refit(
    dataset: SiteDataset,
    state: SiteState,
    kappa_m: float,
    lambda_j: np.ndarray,
    config: Optional[LassoConfig] = None,
    seed: Seed = 0,
    n_jobs: int = 1,
) -> SiteState:
    """
    Populate the split used by iterative debiasing.

    kappa_m = 0 means no split: both roles use the full dataset and
    Omega-hat^(m1) is the node-wise estimate already held by ``state``.
    """
    if not 0.0 <= kappa_m < 1.0:
        raise ValidationError(f"kappa_m must lie in [0, 1), got {kappa_m}")
    n = dataset.n_m
    lambda_j = _check_lambdas(lambda_j, dataset.p)

    if kappa_m == 0.0:
        everything = np.arange(n)
        state.split = SplitState(everything, everything, 0.0, state.omega_hat, state.sample_cov)
        return state

    n2 = int(np.floor(kappa_m * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    index_2 = np.sort(perm[:n2])
    index_1 = np.sort(perm[n2:])
    if min(index_1.size, index_2.size) < MIN_SITE_SAMPLES:
        raise ValidationError(
            f"site {dataset.site_id}: split sizes {index_1.size}/{index_2.size} "
            f"fall below {MIN_SITE_SAMPLES} samples"
        )

    inflated = lambda_j / np.sqrt(1.0 - kappa_m)
    part_1 = _assemble(
        dataset.site_id, dataset.raw[index_1], inflated, config or LassoConfig(), n_jobs
    )
    state.warnings.extend(f"split: {w}" for w in part_1.warnings)
    state.split = SplitState(
        index_1=index_1,
        index_2=index_2,
        kappa_m=float(kappa_m),
        omega_hat_1=part_1.omega_hat,
        sigma_hat_2=sample_covariance(dataset.raw[index_2]),
    )
    return state


def iterate_debias(state: SiteState, current: np.ndarray) -> np.ndarray:
    """(B + B^T)/2 with B = O1^T + current - O1^T Sigma2 current"""
    if state.split is None:
        raise ValidationError("split_and_refit must run before iterate_debias")
    current = np.asarray(current, dtype=np.float64)
    if current.shape != (state.p, state.p):
        raise DimensionError(f"current estimate has shape {current.shape}, expected {(state.p, state.p)}")
    o1t = state.split.omega_hat_1.T
    b = o1t + current - o1t @ state.split.sigma_hat_2 @ current
    return symmetrize(b)


def summarize(state: SiteState) -> LocalSummary:
    if state.omega_bar is None or state.v_hat is None:
        raise ValidationError("summarize requires debias and estimate_variances")
    return LocalSummary(
        site_id=state.site_id,
        n_m=state.n_m,
        omega_bar=state.omega_bar,
        v_hat=state.v_hat,
        kappa_m=state.kappa_m,
    )


def holdout_split(
    dataset: SiteDataset, fraction: float, seed: Seed = 0
) -> Tuple[SiteDataset, np.ndarray, int]:
    """
    Reserve rows for level scaling.

    Returns the fitting part and the held-out p x p covariance; the held-out
    rows themselves never leave this function.
    """
    n = dataset.n_m
    n_hold = int(np.floor(fraction * n + 0.5))
    if n_hold < 2 or n - n_hold < MIN_SITE_SAMPLES:
        raise ValidationError(
            f"site {dataset.site_id}: cannot hold out {n_hold} of {n} samples"
        )
    perm = np.random.default_rng(seed).permutation(n)
    hold = np.sort(perm[:n_hold])
    keep = np.sort(perm[n_hold:])
    return (
        SiteDataset(dataset.site_id, dataset.raw[keep]),
        sample_covariance(dataset.raw[hold]),
        n_hold,
    )

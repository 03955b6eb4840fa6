"""
Integrative losses, the pooled baseline and the simulation harness.
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog
from joblib import Parallel, delayed

from distheat.core.errors import DimensionError, DistHeatError, ValidationError
from distheat.core.linalg import (
    MatrixNorm,
    matrix_norm,
    symmetrize,
    weighted_l1_entrywise,
    weighted_l2_entrywise,
    weights_from_sizes,
)
from distheat.models.ensemble import PrecisionEnsemble
from distheat.models.site import SiteDataset, site_sort_key
from distheat.schemas.config import (
    LambdaRule,
    LassoConfig,
    LevelScalingConfig,
    RunConfig,
    ShrinkageConfig,
    ThresholdRule,
)
from distheat.schemas.datagen import GraphSpec, SampleSpec
from distheat.schemas.report import (
    RESULTS_SCHEMA_VERSION,
    ExperimentGrid,
    LossKind,
    LossReport,
    Reduction,
)
from distheat.services import datagen, site
from distheat.services.protocol import DistributedRun

logger = structlog.get_logger(__name__)

WEIGHT_MATCH_TOL = 1e-12
SERIES_METHOD = "iteheat"
BASELINE_METHOD = "pooled_nodewise"


def _check_pair(est: PrecisionEnsemble, truth: PrecisionEnsemble) -> None:
    if est.M != truth.M or est.p != truth.p:
        raise DimensionError(
            f"estimate is M={est.M}, p={est.p}; truth is M={truth.M}, p={truth.p}"
        )
    if np.max(np.abs(est.weights - truth.weights)) > WEIGHT_MATCH_TOL:
        raise ValidationError("estimate and truth carry different site weights")


def loss_matrix(
    est: PrecisionEnsemble,
    truth: PrecisionEnsemble,
    kind: Union[LossKind, str] = LossKind.L1r,
    r: float = 1.0,
) -> np.ndarray:
    """Entry (j,k) is the weighted l1 (L1r) or l2 (L2r) norm of the site deviations, to the power r"""
    if r < 1.0:
        raise ValidationError(f"r must be >= 1, got {r}")
    _check_pair(est, truth)
    deviation = est.omegas - truth.omegas
    if LossKind(kind) is LossKind.L1r:
        norms = weighted_l1_entrywise(deviation, est.weights)
    else:
        norms = weighted_l2_entrywise(deviation, est.weights)
    return norms**r


def reduce_loss(loss: np.ndarray) -> Dict[Reduction, float]:
    p = loss.shape[0]
    return {
        Reduction.one: matrix_norm(loss, MatrixNorm.one),
        Reduction.two: matrix_norm(loss, MatrixNorm.two),
        Reduction.inf: matrix_norm(loss, MatrixNorm.inf),
        Reduction.frobenius_sq_over_p: float(np.sum(loss * loss)) / p,
    }


def evaluate(
    est: PrecisionEnsemble,
    truth: PrecisionEnsemble,
    r: float = 1.0,
    kind: Union[LossKind, str] = LossKind.L1r,
    series: Optional[Sequence[PrecisionEnsemble]] = None,
) -> LossReport:
    """Reduce the loss matrix under matrix 1/2/inf norms and squared Frobenius / p"""
    reductions = reduce_loss(loss_matrix(est, truth, kind, r))
    rounds = None
    if series is not None:
        rounds = [reduce_loss(loss_matrix(e, truth, kind, r)) for e in series]
    return LossReport(
        kind=LossKind(kind),
        r=r,
        reductions=reductions,
        series=rounds,
        metadata=dict(est.metadata),
    )


def pooled_baseline(
    datasets: Sequence[SiteDataset],
    lambda_rule: Optional[LambdaRule] = None,
    lasso: Optional[LassoConfig] = None,
) -> PrecisionEnsemble:
    """
    Oracle baseline with raw-data access: one node-wise fit on all rows.

    Each site is centered by its own mean before stacking. The symmetrized
    estimate is replicated once per site.
    """
    if len(datasets) == 0:
        raise ValidationError("pooled baseline needs at least one dataset")
    rule = lambda_rule or LambdaRule()
    ordered = sorted(datasets, key=lambda d: site_sort_key(d.site_id))
    stacked = np.vstack([d.raw - d.raw.mean(axis=0, keepdims=True) for d in ordered])
    pooled = SiteDataset("pooled", stacked)
    state = site.fit_nodewise(pooled, site.default_lambdas(pooled.p, pooled.n_m, rule), lasso)
    estimate = symmetrize(state.omega_hat)

    sizes = [d.n_m for d in datasets]
    return PrecisionEnsemble(
        [estimate] * len(datasets),
        weights_from_sizes(sizes),
        metadata={"oracle": True, "method": BASELINE_METHOD},
    )


def support_f1(estimated: np.ndarray, truth: np.ndarray) -> float:
    """F1 score of two boolean supports; 1.0 when both are empty"""
    estimated = np.asarray(estimated, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.sum(estimated & truth))
    fp = int(np.sum(estimated & ~truth))
    fn = int(np.sum(~estimated & truth))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def estimated_supports(lambda_hats: np.ndarray, gamma_hat: np.ndarray):
    off = ~np.eye(gamma_hat.shape[0], dtype=bool)
    return np.any(lambda_hats != 0.0, axis=0) & off, (gamma_hat != 0.0) & off


def _replication_seeds(seed: int, cell: int, rep: int) -> np.ndarray:
    return np.random.default_rng([seed, cell, rep]).integers(0, 2**31 - 1, size=3)


def run_replication(
    cell: Dict[str, object],
    grid: ExperimentGrid,
    seed: int,
    cell_index: int,
    rep: int,
) -> List[Dict[str, object]]:
    """One simulated dataset: IteHEAT series (t = 0..T) plus the pooled baseline"""
    graph_seed, sample_seed, run_seed = (int(s) for s in _replication_seeds(seed, cell_index, rep))
    spec = GraphSpec(
        kind=cell["graph"],
        p=cell["p"],
        M=cell["M"],
        hete_ratio=cell["hete_ratio"],
        target_degree=grid.target_degree,
        seed=graph_seed,
    )
    ensemble, _ = datagen.generate_ensemble(spec)
    sizes = datagen.sample_sizes(SampleSpec(n0=cell["n0"], M=cell["M"], seed=sample_seed))
    datasets = datagen.sample_sites(ensemble, sizes, seed=sample_seed)
    truth = PrecisionEnsemble.from_sample_sizes(ensemble.omegas, sizes)

    rule = ThresholdRule(family=cell["rule"])
    config = RunConfig(
        shrinkage=ShrinkageConfig(rule1=rule, rule2=rule),
        level_scaling=LevelScalingConfig(enabled=grid.level_scaling),
        kappa=grid.kappa,
        seed=run_seed,
    )
    run = DistributedRun(datasets, config, rounds=grid.rounds)
    estimates = run.execute()

    series = [PrecisionEnsemble(run.local_estimates(), truth.weights)]
    series.extend(PrecisionEnsemble(list(e.omega_tildes), truth.weights) for e in estimates)

    records: List[Dict[str, object]] = []
    for t, est in enumerate(series):
        for red, value in reduce_loss(loss_matrix(est, truth, LossKind.L1r, grid.r)).items():
            records.append({"method": SERIES_METHOD, "t": t, "statistic": red.value, "value": value})

    common, hete = datagen.true_supports(truth.omegas)
    lam_support, gam_support = estimated_supports(estimates[-1].lambda_hats, estimates[-1].gamma_hat)
    final_t = len(series) - 1
    records.append({"method": SERIES_METHOD, "t": final_t, "statistic": "lambda_f1", "value": support_f1(lam_support, hete)})
    records.append({"method": SERIES_METHOD, "t": final_t, "statistic": "gamma_f1", "value": support_f1(gam_support, common)})

    if grid.include_baseline:
        baseline = pooled_baseline(datasets)
        for red, value in reduce_loss(loss_matrix(baseline, truth, LossKind.L1r, grid.r)).items():
            records.append({"method": BASELINE_METHOD, "t": -1, "statistic": red.value, "value": value})
    return records


def _safe_replication(cell, grid, seed, cell_index, rep):
    try:
        return rep, run_replication(cell, grid, seed, cell_index, rep), None
    except (DistHeatError, np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("Replication failed", cell=cell_index, rep=rep, error=str(exc))
        return rep, [], f"{exc.__class__.__name__}: {exc}"


def cell_fingerprint(grid: ExperimentGrid, replications: int, seed: int, cell_index: int) -> str:
    """Digest of everything a cell's results depend on"""
    document = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "grid": grid.model_dump(mode="json"),
        "replications": replications,
        "seed": seed,
        "cell": cell_index,
    }
    return hashlib.sha256(json.dumps(document, sort_keys=True).encode()).hexdigest()[:16]


def _read_cell(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False, na_values=[""], dtype={"fingerprint": str})


def summarize_cell(
    cell: Dict[str, object],
    cell_index: int,
    records: pd.DataFrame,
    replications: int,
    failures: List[str],
    fingerprint: str = "",
) -> pd.DataFrame:
    """Median and IQR per (method, t, statistic)"""
    columns = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "fingerprint": fingerprint,
        "cell": cell_index,
        **cell,
        "replications": replications,
        "failed": len(failures),
        "error": failures[0] if failures else "",
    }
    if records.empty:
        return pd.DataFrame([{**columns, "method": "", "t": -1, "statistic": "", "median": np.nan, "q1": np.nan, "q3": np.nan, "iqr": np.nan, "n": 0}])

    grouped = records.groupby(["method", "t", "statistic"], sort=True)["value"]
    summary = grouped.agg(
        median="median",
        q1=lambda v: float(np.quantile(v, 0.25)),
        q3=lambda v: float(np.quantile(v, 0.75)),
        n="count",
    ).reset_index()
    summary["iqr"] = summary["q3"] - summary["q1"]
    for name, value in reversed(list(columns.items())):
        summary.insert(0, name, value)
    return summary


class ExperimentRunner:
    """
    Runs every grid cell and returns the summary table.

    With ``out_dir`` each finished cell is written to ``cells/cell_<i>.csv`` and
    reused by a rerun with the same grid, replications and seed; a cell file
    written under any other configuration is recomputed. The full table goes to
    ``results.csv``.
    """

    def __init__(
        self,
        grid: ExperimentGrid,
        replications: int,
        seed: int = 0,
        out_dir: Optional[Union[str, Path]] = None,
        threads: int = 1,
    ):
        if replications < 1:
            raise ValidationError("replications must be >= 1")
        self.grid = grid
        self.replications = replications
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threads = threads

    @property
    def cell_dir(self) -> Optional[Path]:
        return self.out_dir / "cells" if self.out_dir is not None else None

    def _cached(self, cell_index: int, fingerprint: str) -> Optional[pd.DataFrame]:
        if self.cell_dir is None:
            return None
        path = self.cell_dir / f"cell_{cell_index}.csv"
        if not path.is_file():
            return None
        table = _read_cell(path)
        if "fingerprint" in table.columns and (table["fingerprint"] == fingerprint).all():
            return table
        logger.info("Cell results are from another configuration; recomputing", cell=cell_index)
        return None

    def run_cell(self, cell_index: int, cell: Dict[str, object]) -> pd.DataFrame:
        fingerprint = cell_fingerprint(self.grid, self.replications, self.seed, cell_index)
        cached = self._cached(cell_index, fingerprint)
        if cached is not None:
            logger.info("Cell already complete; skipping", cell=cell_index)
            return cached

        outcomes = Parallel(n_jobs=self.threads, prefer="threads")(
            delayed(_safe_replication)(cell, self.grid, self.seed, cell_index, rep)
            for rep in range(self.replications)
        )
        outcomes.sort(key=lambda item: item[0])
        records = pd.DataFrame(
            [row for _, rows, _ in outcomes for row in rows],
            columns=["method", "t", "statistic", "value"],
        )
        failures = [err for _, _, err in outcomes if err is not None]
        table = summarize_cell(cell, cell_index, records, self.replications, failures, fingerprint)
        if self.cell_dir is not None:
            path = self.cell_dir / f"cell_{cell_index}.csv"
            table.to_csv(path, index=False, float_format="%.17g")
            # round-trip through the CSV so resumed and fresh runs agree
            table = _read_cell(path)
        logger.info("Cell complete", cell=cell_index, failed=len(failures), **cell)
        return table

    def run(self) -> pd.DataFrame:
        if self.cell_dir is not None:
            self.cell_dir.mkdir(parents=True, exist_ok=True)
        tables = [self.run_cell(i, cell) for i, cell in enumerate(self.grid.cells())]
        results = pd.concat(tables, ignore_index=True)
        if self.out_dir is not None:
            results.to_csv(self.out_dir / "results.csv", index=False, float_format="%.17g")
        return results


def run_experiment(
    grid: ExperimentGrid,
    replications: int,
    seed: int = 0,
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
) -> pd.DataFrame:
    return ExperimentRunner(grid, replications, seed, out_dir, threads).run()

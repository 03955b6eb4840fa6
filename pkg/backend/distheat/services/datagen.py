"""
Synthetic heterogeneous precision ensembles and Gaussian site datasets.

Edges of an Erdos-Renyi or banded graph are split into a common part, whose
values are shared by every site, and a heterogeneous part with per-site values.
The permutation deciding the split is drawn before and independently of
hete_ratio, so raising hete_ratio only moves edges from common to heterogeneous.
"""

import logging
from typing import List, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from distheat.core.errors import FactorizationError, ValidationError
from distheat.core.linalg import as_matrix, is_symmetric, symmetrize
from distheat.models.ensemble import PrecisionEnsemble
from distheat.models.site import SiteDataset
from distheat.schemas.datagen import GraphKind, GraphSpec, SampleSpec, SparsityProfile

logger = logging.getLogger(__name__)

DIAGONAL_MARGIN = 0.5
MAX_REDRAWS = 100

# Stream salts
SIZE_STREAM = 1
DATA_STREAM = 2

Seed = Union[int, Sequence[int]]


def _edge_pairs(spec: GraphSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(spec.p, k=1)
    if spec.kind == GraphKind.banded:
        keep = (cols - rows) <= int(spec.target_degree)
    else:
        keep = rng.random(rows.size) < spec.target_degree / (spec.p - 1)
    return rows[keep], cols[keep]


def _signed_magnitudes(rng: np.random.Generator, size, low: float, high: float) -> np.ndarray:
    magnitude = rng.uniform(low, high, size=size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return magnitude * sign


def generate_ensemble(spec: GraphSpec) -> Tuple[PrecisionEnsemble, SparsityProfile]:
    """Build M positive definite precision matrices with equal weights"""
    rng = np.random.default_rng(spec.seed)
    low, high = spec.edge_weight_range
    p, M = spec.p, spec.M

    rows, cols = _edge_pairs(spec, rng)
    n_edges = rows.size

    if spec.kind == GraphKind.banded:
        common = spec.band_value ** (cols - rows).astype(np.float64)
    else:
        common = _signed_magnitudes(rng, n_edges, low, high)
    order = rng.permutation(n_edges)
    site_values = _signed_magnitudes(rng, (n_edges, M), low, high)

    if M > 1:
        for e in range(n_edges):
            redraws = 0
            while np.all(site_values[e] == site_values[e, 0]):
                if redraws >= MAX_REDRAWS:
                    raise ValidationError("could not draw distinct heterogeneous values")
                site_values[e] = _signed_magnitudes(rng, M, low, high)
                redraws += 1

    n_hete = int(np.floor(spec.hete_ratio * n_edges + 0.5)) if M > 1 else 0
    hete = np.zeros(n_edges, dtype=bool)
    hete[order[:n_hete]] = True

    base = np.zeros((M, p, p))
    for m in range(M):
        values = np.where(hete, site_values[:, m], common)
        base[m, rows, cols] = values
        base[m, cols, rows] = values

    shift = max(abs(float(linalg.eigvalsh(base[m])[0])) + DIAGONAL_MARGIN for m in range(M))
    omegas = [base[m] + shift * np.eye(p) for m in range(M)]

    ensemble = PrecisionEnsemble(omegas, np.full(M, 1.0 / M))
    profile = sparsity_profile(ensemble.omegas)
    logger.info(
        "Generated %s ensemble: p=%d M=%d edges=%d heterogeneous=%d s1=%d s2=%d",
        spec.kind.value,
        p,
        M,
        n_edges,
        n_hete,
        profile.s1,
        profile.s2,
    )
    return ensemble, profile


def true_supports(omegas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Off-diagonal common and heterogeneous supports of a stack of matrices.

    Common entries are nonzero and identical across sites; heterogeneous entries
    differ between at least two sites.
    """
    omegas = np.asarray(omegas, dtype=np.float64)
    off = ~np.eye(omegas.shape[1], dtype=bool)
    same = np.all(omegas == omegas[0][None, :, :], axis=0)
    common = same & (omegas[0] != 0.0) & off
    hete = ~same & off
    return common, hete


def sparsity_profile(omegas: np.ndarray) -> SparsityProfile:
    common, hete = true_supports(omegas)
    return SparsityProfile(
        s1=int(common.sum(axis=0).max(initial=0)),
        s2=int(hete.sum(axis=0).max(initial=0)),
    )


def sample_sizes(spec: SampleSpec) -> List[int]:
    """n_m = n0 + ceil((n0/25) z), redrawn while below max(10, 0.8 n0)"""
    sd = spec.n0 / 25.0
    floor = max(10.0, spec.n0 - 5.0 * sd)
    sizes = []
    for m in range(spec.M):
        rng = np.random.default_rng([spec.seed, SIZE_STREAM, m])
        while True:
            n_m = spec.n0 + int(np.ceil(sd * rng.standard_normal()))
            if n_m >= floor:
                break
        sizes.append(n_m)
    return sizes


def sample_gaussian(
    omega: np.ndarray, n: int, seed: Seed = 0, site_id: str = "site_0"
) -> SiteDataset:
    """n rows of N(0, omega^{-1})"""
    omega = as_matrix(omega, name="omega")
    if not is_symmetric(omega):
        raise ValidationError("omega must be symmetric")

    _, info = linalg.lapack.dpotrf(omega, lower=1)
    if info > 0:
        raise FactorizationError(pivot=info - 1)

    sigma = symmetrize(linalg.inv(omega))
    chol = linalg.cholesky(sigma, lower=True)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, omega.shape[0]))
    return SiteDataset(site_id, z @ chol.T)


def sample_sites(
    ensemble: PrecisionEnsemble,
    sizes: Sequence[int],
    seed: int = 0,
    n_jobs: int = 1,
) -> List[SiteDataset]:
    """One dataset per ensemble member, each on its own seed stream"""
    if len(sizes) != ensemble.M:
        raise ValidationError(f"{len(sizes)} sample sizes for {ensemble.M} sites")
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(sample_gaussian)(
            ensemble[m], int(sizes[m]), [seed, DATA_STREAM, m], site_name(m)
        )
        for m in range(ensemble.M)
    )


def site_name(m: int) -> str:
    return f"site_{m}"

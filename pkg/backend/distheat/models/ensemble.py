from typing import Any, Dict, Optional, Sequence

import numpy as np

from distheat.core.errors import DimensionError, ValidationError
from distheat.core.linalg import (
    as_matrix,
    symmetrize,
    validate_weights,
    weighted_sum,
    weights_from_sizes,
)

IDENTIFICATION_TOL = 1e-8


class PrecisionEnsemble:
    """M symmetric p x p precision matrices with site weights n_m / N"""

    def __init__(
        self,
        omegas: Sequence[np.ndarray],
        weights: Sequence[float],
        metadata: Optional[Dict[str, Any]] = None,
    ):
        if len(omegas) == 0:
            raise ValidationError("an ensemble needs at least one matrix")
        mats = [as_matrix(om, name=f"omega[{m}]") for m, om in enumerate(omegas)]
        p = mats[0].shape[0]
        for m, om in enumerate(mats):
            if om.shape != (p, p):
                raise DimensionError(f"omega[{m}] has shape {om.shape}, expected {(p, p)}")
        w = validate_weights(weights)
        if w.shape[0] != len(mats):
            raise DimensionError(f"{len(mats)} matrices but {w.shape[0]} weights")

        # Members are symmetrized on construction
        self.omegas = np.stack([symmetrize(om) for om in mats])
        self.omegas.setflags(write=False)
        self.weights = w
        self.weights.setflags(write=False)
        self.metadata: Dict[str, Any] = dict(metadata or {})

    @classmethod
    def from_sample_sizes(
        cls, omegas: Sequence[np.ndarray], sample_sizes: Sequence[int]
    ) -> "PrecisionEnsemble":
        return cls(omegas, weights_from_sizes(sample_sizes))

    @property
    def M(self) -> int:
        return self.omegas.shape[0]

    @property
    def p(self) -> int:
        return self.omegas.shape[1]

    def __getitem__(self, m: int) -> np.ndarray:
        return self.omegas[m]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "M": self.M,
            "p": self.p,
            "weights": self.weights.tolist(),
            "metadata": self.metadata,
        }


class Decomposition:
    """Common baseline Gamma plus heterogeneity Lambda^(m) with sum_m w_m Lambda^(m) = 0"""

    def __init__(self, gamma: np.ndarray, lambdas: np.ndarray, weights: np.ndarray):
        self.gamma = gamma
        self.lambdas = lambdas
        self.weights = weights

    def reconstruct(self) -> np.ndarray:
        return self.gamma[None, :, :] + self.lambdas

    def identification_residual(self) -> float:
        """max_jk |sum_m w_m Lambda^(m)_jk|"""
        return float(np.max(np.abs(weighted_sum(self.lambdas, self.weights))))


def decompose(ensemble: PrecisionEnsemble) -> Decomposition:
    """Gamma = sum_m w_m Omega^(m), Lambda^(m) = Omega^(m) - Gamma"""
    gamma = weighted_sum(ensemble.omegas, ensemble.weights)
    lambdas = ensemble.omegas - gamma[None, :, :]
    decomposition = Decomposition(gamma, lambdas, ensemble.weights)
    if decomposition.identification_residual() > IDENTIFICATION_TOL:
        raise ValidationError("identification constraint violated in decomposition")
    return decomposition

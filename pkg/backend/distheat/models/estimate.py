from typing import Any, Dict, List, Optional

import numpy as np

from distheat.models.ensemble import PrecisionEnsemble


class HeatEstimate:
    """Integrated estimate for one round: Omega-tilde^(m) = Gamma-hat + Lambda-hat^(m)"""

    def __init__(
        self,
        gamma_hat: np.ndarray,
        lambda_hats: np.ndarray,
        levels1: np.ndarray,
        levels2: np.ndarray,
        weights: np.ndarray,
        site_ids: List[str],
        round: int = 1,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.gamma_hat = gamma_hat
        self.lambda_hats = lambda_hats
        self.levels1 = levels1
        self.levels2 = levels2
        self.weights = weights
        self.site_ids = list(site_ids)
        self.round = round
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.omega_tildes = gamma_hat[None, :, :] + lambda_hats

    @property
    def M(self) -> int:
        return self.lambda_hats.shape[0]

    @property
    def p(self) -> int:
        return self.gamma_hat.shape[0]

    def as_ensemble(self) -> PrecisionEnsemble:
        return PrecisionEnsemble(list(self.omega_tildes), self.weights)

    def identification_residual(self) -> float:
        """max_jk |sum_m w_m Lambda-hat^(m)_jk|"""
        out = np.zeros_like(self.gamma_hat)
        for m in range(self.M):
            out += self.weights[m] * self.lambda_hats[m]
        return float(np.max(np.abs(out)))

    def max_asymmetry(self) -> float:
        mats = [self.gamma_hat, *self.lambda_hats, *self.omega_tildes]
        return float(max(np.max(np.abs(a - a.T)) for a in mats))

    def support_counts(self) -> Dict[str, int]:
        return {
            "gamma_nonzero": int(np.count_nonzero(self.gamma_hat)),
            "lambda_nonzero": int(np.count_nonzero(self.lambda_hats)),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "M": self.M,
            "p": self.p,
            "site_ids": self.site_ids,
            "weights": self.weights.tolist(),
            **self.support_counts(),
            "metadata": self.metadata,
        }

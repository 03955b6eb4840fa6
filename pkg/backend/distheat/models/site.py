import re
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from distheat.core.errors import ValidationError
from distheat.core.linalg import as_matrix, is_symmetric

MIN_SITE_SAMPLES = 10


def site_sort_key(site_id: str) -> Tuple:
    """Natural order, so site_2 sorts before site_10"""
    return tuple(
        (0, int(part), "") if part.isdigit() else (1, 0, part)
        for part in re.split(r"(\d+)", str(site_id))
        if part
    )


class SiteDataset:
    """One site's raw n_m x p sample matrix"""

    def __init__(self, site_id: str, raw: np.ndarray):
        raw = as_matrix(raw, name=f"site {site_id} data")
        if raw.shape[0] < MIN_SITE_SAMPLES:
            raise ValidationError(
                f"site {site_id} has {raw.shape[0]} samples; at least "
                f"{MIN_SITE_SAMPLES} are required"
            )
        if raw.shape[1] < 2:
            raise ValidationError(f"site {site_id} has p={raw.shape[1]}; p >= 2 required")
        self.site_id = str(site_id)
        self.raw = raw
        self.raw.setflags(write=False)

    @property
    def n_m(self) -> int:
        return self.raw.shape[0]

    @property
    def p(self) -> int:
        return self.raw.shape[1]


class SplitState:
    """Sample-splitting products used by iterative debiasing"""

    def __init__(
        self,
        index_1: np.ndarray,
        index_2: np.ndarray,
        kappa_m: float,
        omega_hat_1: np.ndarray,
        sigma_hat_2: np.ndarray,
    ):
        self.index_1 = index_1
        self.index_2 = index_2
        self.kappa_m = kappa_m
        self.omega_hat_1 = omega_hat_1
        self.sigma_hat_2 = sigma_hat_2


class SiteState:
    """Everything a site computes locally; built once, then read-only"""

    def __init__(
        self,
        site_id: str,
        n_m: int,
        centered: np.ndarray,
        sample_cov: np.ndarray,
        gammas: List[np.ndarray],
        residuals: np.ndarray,
        omega_hat: np.ndarray,
        lambdas: np.ndarray,
    ):
        self.site_id = site_id
        self.n_m = n_m
        self.centered = centered
        self.sample_cov = sample_cov
        self.gammas = gammas
        self.residuals = residuals
        self.omega_hat = omega_hat
        self.lambdas = lambdas
        self.omega_bar: Optional[np.ndarray] = None
        self.v_hat: Optional[np.ndarray] = None
        self.split: Optional[SplitState] = None
        self.warnings: List[str] = []

    @property
    def p(self) -> int:
        return self.omega_hat.shape[0]

    @property
    def kappa_m(self) -> float:
        return self.split.kappa_m if self.split is not None else 0.0


class LocalSummary:
    """The only payload a site ever sends upstream: n_m, Omega-bar, v-hat, kappa_m"""

    __slots__ = ("site_id", "n_m", "omega_bar", "v_hat", "kappa_m")

    def __init__(
        self,
        site_id: str,
        n_m: int,
        omega_bar: np.ndarray,
        v_hat: np.ndarray,
        kappa_m: float = 0.0,
    ):
        omega_bar = as_matrix(omega_bar, name="omega_bar")
        v_hat = as_matrix(v_hat, name="v_hat")
        p = omega_bar.shape[0]
        if omega_bar.shape != (p, p) or v_hat.shape != (p, p):
            raise ValidationError("summary matrices must both be p x p")
        if not (is_symmetric(omega_bar) and is_symmetric(v_hat)):
            raise ValidationError(f"summary from site {site_id} is not symmetric")
        if n_m < 1:
            raise ValidationError("n_m must be positive")
        if not 0.0 <= kappa_m < 1.0:
            raise ValidationError("kappa_m must lie in [0, 1)")
        self.site_id = str(site_id)
        self.n_m = int(n_m)
        self.omega_bar = omega_bar
        self.v_hat = v_hat
        self.kappa_m = float(kappa_m)

    @property
    def p(self) -> int:
        return self.omega_bar.shape[0]

    def scalar_count(self) -> int:
        return 2 * self.p * self.p + 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "site_id": self.site_id,
            "n_m": self.n_m,
            "kappa_m": self.kappa_m,
            "omega_bar": self.omega_bar.tolist(),
            "v_hat": self.v_hat.tolist(),
        }

from enum import Enum
from typing import Tuple

from pydantic import BaseModel, Field, model_validator


class GraphKind(str, Enum):
    erdos_renyi = "erdos_renyi"
    banded = "banded"


class GraphSpec(BaseModel):
    kind: GraphKind = GraphKind.erdos_renyi
    p: int = Field(..., ge=2)
    target_degree: float = Field(default=3.0, gt=0)  # expected degree (ER) or bandwidth
    edge_weight_range: Tuple[float, float] = (0.4, 0.8)
    band_value: float = Field(default=0.5, gt=0, lt=1)
    hete_ratio: float = Field(default=0.0, ge=0.0, le=1.0)
    M: int = Field(..., ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def validate_feasible(self):
        low, high = self.edge_weight_range
        if not 0 < low <= high:
            raise ValueError("edge_weight_range must satisfy 0 < low <= high")
        if self.target_degree >= self.p:
            raise ValueError(
                f"target_degree ({self.target_degree}) must be below p ({self.p})"
            )
        if self.kind == GraphKind.banded and int(self.target_degree) != self.target_degree:
            raise ValueError("bandwidth of a banded graph must be an integer")
        return self


class SampleSpec(BaseModel):
    n0: int = Field(..., ge=10)
    M: int = Field(..., ge=1)
    seed: int = 0


class SparsityProfile(BaseModel):
    s1: int = Field(..., ge=0)  # max shared-support size per column
    s2: int = Field(..., ge=0)  # max heterogeneous-support size per column

    @property
    def s0(self) -> int:
        return max(self.s1, self.s2)

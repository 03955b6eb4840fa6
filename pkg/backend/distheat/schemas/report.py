from enum import Enum
from itertools import product
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from distheat.schemas.config import ThresholdFamily
from distheat.schemas.datagen import GraphKind


class LossKind(str, Enum):
    L1r = "L1r"
    L2r = "L2r"


class Reduction(str, Enum):
    one = "one"
    two = "two"
    inf = "inf"
    frobenius_sq_over_p = "frobenius_sq_over_p"


class LossReport(BaseModel):
    kind: LossKind = LossKind.L1r
    r: float = Field(default=1.0, ge=1.0)
    reductions: Dict[Reduction, float]
    series: Optional[List[Dict[Reduction, float]]] = None  # indexed by round t
    metadata: Dict[str, object] = Field(default_factory=dict)

    def flat(self) -> Dict[str, float]:
        return {red.value: value for red, value in self.reductions.items()}


RESULTS_SCHEMA_VERSION = 1


class ExperimentGrid(BaseModel):
    """Cross-product of simulation settings; every list is one grid axis"""

    n0: List[int] = Field(default_factory=lambda: [400])
    p: List[int] = Field(default_factory=lambda: [100])
    M: List[int] = Field(default_factory=lambda: [5])
    hete_ratio: List[float] = Field(default_factory=lambda: [0.0])
    graph: List[GraphKind] = Field(default_factory=lambda: [GraphKind.erdos_renyi])
    rule: List[ThresholdFamily] = Field(default_factory=lambda: [ThresholdFamily.scad])
    rounds: int = Field(default=2, ge=1)
    kappa: float = Field(default=0.0, ge=0.0, lt=1.0)
    r: float = Field(default=1.0, ge=1.0)
    target_degree: float = Field(default=3.0, gt=0)
    include_baseline: bool = True
    level_scaling: bool = False  # held-out level multiplier, see LevelScalingConfig

    @model_validator(mode="after")
    def validate_axes(self):
        for name in ("n0", "p", "M", "hete_ratio", "graph", "rule"):
            if not getattr(self, name):
                raise ValueError(f"grid axis '{name}' is empty")
        if any(n < 10 for n in self.n0):
            raise ValueError("n0 values must be >= 10")
        if any(not 0.0 <= h <= 1.0 for h in self.hete_ratio):
            raise ValueError("hete_ratio values must lie in [0, 1]")
        if any(self.target_degree >= p for p in self.p):
            raise ValueError("target_degree must be below every p")
        return self

    def cells(self) -> List[Dict[str, object]]:
        """Grid cells in a fixed order; the position is the cell index"""
        return [
            {
                "n0": n0,
                "p": p,
                "M": M,
                "hete_ratio": hete,
                "graph": graph.value,
                "rule": rule.value,
            }
            for n0, p, M, hete, graph, rule in product(
                self.n0, self.p, self.M, self.hete_ratio, self.graph, self.rule
            )
        ]

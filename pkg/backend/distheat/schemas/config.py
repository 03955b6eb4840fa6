from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class ThresholdFamily(str, Enum):
    soft = "soft"
    hard = "hard"
    scad = "scad"
    mcp = "mcp"


class ThresholdRule(BaseModel):
    family: ThresholdFamily = ThresholdFamily.scad
    scad_a: float = Field(default=3.7, gt=2.0)
    mcp_gamma: float = Field(default=3.0, gt=1.0)

    model_config = {"frozen": True}


class LambdaMode(str, Enum):
    default = "default"
    cv = "cv"


class LambdaRule(BaseModel):
    """Node-wise Lasso penalty: c_lambda * sqrt(log(p) / n_m), optionally tuned by CV"""

    c_lambda: float = Field(default=0.5, gt=0)
    mode: LambdaMode = LambdaMode.default
    cv_folds: int = Field(default=5, ge=2)
    cv_grid_size: int = Field(default=10, ge=2)
    cv_grid_low: float = Field(default=0.25, gt=0)
    cv_grid_high: float = Field(default=4.0, gt=0)

    @model_validator(mode="after")
    def validate_grid(self):
        if self.cv_grid_low >= self.cv_grid_high:
            raise ValueError("cv_grid_low must be below cv_grid_high")
        return self


class LassoConfig(BaseModel):
    max_iters: int = Field(default=10_000, ge=1)
    coord_tol: float = Field(default=1e-8, gt=0)
    kkt_tol: float = Field(default=1e-6, gt=0)


class ShrinkageConfig(BaseModel):
    delta: float = Field(default=0.1, gt=0)
    C1_bar: float = Field(default=0.0, ge=0)
    C2_bar: float = Field(default=0.0, ge=0)
    C1_tilde: float = Field(default=0.0, ge=0)
    C2_tilde: float = Field(default=0.0, ge=0)
    s0_hint: Optional[int] = Field(default=None, ge=0)
    rule1: ThresholdRule = Field(default_factory=ThresholdRule)
    rule2: ThresholdRule = Field(default_factory=ThresholdRule)

    @model_validator(mode="after")
    def validate_s0(self):
        """s0 is only consulted by the higher-order terms"""
        uses_s0 = self.C1_bar > 0 or self.C2_bar > 0 or self.C1_tilde > 0 or self.C2_tilde > 0
        if uses_s0 and self.s0_hint is None:
            raise ValueError("s0_hint is required when a higher-order constant is nonzero")
        return self

    def s0(self) -> int:
        return self.s0_hint or 0


class LevelScalingConfig(BaseModel):
    """Global multiplier on shrinkage levels chosen by held-out likelihood"""

    enabled: bool = False
    holdout_fraction: float = Field(default=0.2, gt=0, lt=0.5)
    grid: List[float] = Field(
        default_factory=lambda: [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0]
    )

    @model_validator(mode="after")
    def validate_grid(self):
        if not self.grid or any(g <= 0 for g in self.grid):
            raise ValueError("level scaling grid must contain positive multipliers")
        self.grid = sorted(self.grid)
        return self


class RunConfig(BaseModel):
    """Every tunable of a distributed run; echoed into output manifests"""

    lasso: LassoConfig = Field(default_factory=LassoConfig)
    lambda_rule: LambdaRule = Field(default_factory=LambdaRule)
    shrinkage: ShrinkageConfig = Field(default_factory=ShrinkageConfig)
    level_scaling: LevelScalingConfig = Field(default_factory=LevelScalingConfig)
    kappa: float = Field(default=0.0, ge=0.0, lt=1.0)
    rounds: int = Field(default=1, ge=1)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    record_timing: bool = False

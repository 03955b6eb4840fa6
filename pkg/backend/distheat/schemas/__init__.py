from distheat.schemas.config import (
    LambdaMode,
    LambdaRule,
    LassoConfig,
    LevelScalingConfig,
    RunConfig,
    ShrinkageConfig,
    ThresholdFamily,
    ThresholdRule,
)
from distheat.schemas.datagen import GraphKind, GraphSpec, SampleSpec, SparsityProfile
from distheat.schemas.protocol import LedgerRound, Message, MessageKind, RunLedger
from distheat.schemas.report import (
    RESULTS_SCHEMA_VERSION,
    ExperimentGrid,
    LossKind,
    LossReport,
    Reduction,
)

__all__ = [
    "LambdaMode",
    "LambdaRule",
    "LassoConfig",
    "LevelScalingConfig",
    "RunConfig",
    "ShrinkageConfig",
    "ThresholdFamily",
    "ThresholdRule",
    "GraphKind",
    "GraphSpec",
    "SampleSpec",
    "SparsityProfile",
    "LedgerRound",
    "Message",
    "MessageKind",
    "RunLedger",
    "RESULTS_SCHEMA_VERSION",
    "ExperimentGrid",
    "LossKind",
    "LossReport",
    "Reduction",
]

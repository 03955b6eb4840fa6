from distheat.models.ensemble import Decomposition, PrecisionEnsemble, decompose
from distheat.models.estimate import HeatEstimate
from distheat.models.site import LocalSummary, SiteDataset, SiteState, SplitState

__all__ = [
    "Decomposition",
    "PrecisionEnsemble",
    "decompose",
    "HeatEstimate",
    "LocalSummary",
    "SiteDataset",
    "SiteState",
    "SplitState",
]

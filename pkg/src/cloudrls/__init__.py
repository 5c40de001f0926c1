"""Cloud-aided collaborative recursive least squares.

Local RLS estimators running on N agents are fused on a cloud node through
consensus ADMM (full, partial or box-constrained partial consensus). Greedy
and centralized baselines, a synchronous node/cloud simulator and synthetic
ARX scenarios are included.
"""

from cloudrls.core import (
    ArxModelSpec,
    ConditioningError,
    ConfigurationError,
    ExtendedSample,
    RlsState,
    Sample,
    WarmUpError,
    build_arx_regressor,
    extend_sample,
    gain_update,
    local_rls_update,
)
from cloudrls.modes import ConsensusMode, Penalties, Variant

__all__ = [
    "ArxModelSpec",
    "ConditioningError",
    "ConfigurationError",
    "ConsensusMode",
    "ExtendedSample",
    "Penalties",
    "RlsState",
    "Sample",
    "Variant",
    "WarmUpError",
    "build_arx_regressor",
    "extend_sample",
    "gain_update",
    "local_rls_update",
]

__version__ = "0.1.0"

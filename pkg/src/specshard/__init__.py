"""Spectral model sharding: optimal SVD-term sampling for heterogeneous federated learning."""

__version__ = "0.1.0"

from .designs import Design, DesignKind, estimate_marginals, make_design, make_rng
from .errors import ConvergenceError, NumericalError, RankZeroError, ShardingError, ValidationError
from .metrics import AnmeReport, anme, mc_discrepancy_collective, mc_discrepancy_unbiased
from .plans import (
    InclusionPlan,
    Strategy,
    collective_discrepancy,
    plan_collective,
    plan_for_keep_ratio,
    plan_unbiased,
    unbiased_discrepancy,
)
from .spectra import (
    Shard,
    SpectralDecomposition,
    build_shard,
    decompose,
    effective_weight,
    keep_count,
    load_matrix,
    save_matrix,
    scaled_multipliers,
)

__all__ = [
    "AnmeReport",
    "ConvergenceError",
    "Design",
    "DesignKind",
    "InclusionPlan",
    "NumericalError",
    "RankZeroError",
    "Shard",
    "ShardingError",
    "SpectralDecomposition",
    "Strategy",
    "ValidationError",
    "anme",
    "build_shard",
    "collective_discrepancy",
    "decompose",
    "effective_weight",
    "estimate_marginals",
    "keep_count",
    "load_matrix",
    "make_design",
    "make_rng",
    "mc_discrepancy_collective",
    "mc_discrepancy_unbiased",
    "plan_collective",
    "plan_for_keep_ratio",
    "plan_unbiased",
    "save_matrix",
    "scaled_multipliers",
    "unbiased_discrepancy",
]

"""Iterative low-rank factorization compression with rank-scheme search.

Public surface: SVD building blocks (linalg), schemes and FLOPS accounting
(compression), the seeded reference model (model), the policy-driven rank
search (search), compress-retrain loops (trajectory), checkpoints, report
serialization, and the command-line front end (cli).
"""

from .compression import (
    FULL,
    FlopsBreakdown,
    LayerFlops,
    LayerSpec,
    SvdCache,
    apply_scheme_factorized,
    apply_scheme_full,
    flops_breakdown,
    is_beneficial,
    layer_flops,
    scheme_speedup,
    validate_scheme,
)
from .exceptions import NumericError, SearchFailure, ValidationError
from .linalg import (
    SvdFactors,
    TruncatedFactors,
    energy,
    energy_to_rank,
    reconstruct,
    svd,
    truncate,
)
from .model import (
    CompressibleModel,
    Dataset,
    TrainConfig,
    TrainResult,
    evaluate,
    generate_dataset,
    init_reference_model,
    train,
)
from .search import (
    ControllerState,
    RewardSpec,
    SearchResult,
    SearchSettings,
    SearchSpace,
    brute_force_search,
    construct_search_space,
    reinforce_search,
    reward_histogram,
    scheme_evaluator,
    scheme_reward,
)
from .trajectory import (
    ExperimentRecord,
    RetrainSettings,
    RunResult,
    StepRecord,
    Trajectory,
    adapt_energy_range,
    allocate_budget,
    default_budget,
    run_apply_ranks,
    run_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "FULL",
    "FlopsBreakdown",
    "LayerFlops",
    "LayerSpec",
    "SvdCache",
    "apply_scheme_factorized",
    "apply_scheme_full",
    "flops_breakdown",
    "is_beneficial",
    "layer_flops",
    "scheme_speedup",
    "validate_scheme",
    "NumericError",
    "SearchFailure",
    "ValidationError",
    "SvdFactors",
    "TruncatedFactors",
    "energy",
    "energy_to_rank",
    "reconstruct",
    "svd",
    "truncate",
    "CompressibleModel",
    "Dataset",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "generate_dataset",
    "init_reference_model",
    "train",
    "ControllerState",
    "RewardSpec",
    "SearchResult",
    "SearchSettings",
    "SearchSpace",
    "brute_force_search",
    "construct_search_space",
    "reinforce_search",
    "reward_histogram",
    "scheme_evaluator",
    "scheme_reward",
    "ExperimentRecord",
    "RetrainSettings",
    "RunResult",
    "StepRecord",
    "Trajectory",
    "adapt_energy_range",
    "allocate_budget",
    "default_budget",
    "run_apply_ranks",
    "run_trajectory",
    "__version__",
]

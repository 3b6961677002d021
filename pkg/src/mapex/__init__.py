"""Offline Pareto-front extraction from single-objective TD3 specialists."""

from .config import RunConfig, full_scale
from .envs import MOPointMass, MOTwoGoal, evaluate_policy, make_env
from .errors import (
    CannotExtractError,
    ChecksumError,
    DegenerateWeightsError,
    DivergenceError,
    MapexError,
    MissingArtifactError,
    MissingCriticError,
    UnsupportedDimensionError,
)
from .extraction import (
    DESK_EXTRACTION,
    CriticFamily,
    ExtractionConfig,
    advantages,
    extract_front,
    mixed_advantage,
    regression_weight,
    train_offspring,
)
from .nn import DenseNetwork, mlp
from .pareto import ParetoArchive, dominates, hypervolume_2d, non_dominated, select_gap, sparsity
from .pipeline import frame_accounting, run_stage
from .replay import ReplayBuffer, allocate_counts, build_hybrid
from .specialist import DESK_TD3, TD3Config, train_secondary_posthoc, train_specialist

__version__ = "0.1.0"

__all__ = [
    "CannotExtractError",
    "ChecksumError",
    "CriticFamily",
    "DESK_EXTRACTION",
    "DESK_TD3",
    "DegenerateWeightsError",
    "DenseNetwork",
    "DivergenceError",
    "ExtractionConfig",
    "MOPointMass",
    "MOTwoGoal",
    "MapexError",
    "MissingArtifactError",
    "MissingCriticError",
    "ParetoArchive",
    "ReplayBuffer",
    "RunConfig",
    "TD3Config",
    "UnsupportedDimensionError",
    "advantages",
    "allocate_counts",
    "build_hybrid",
    "dominates",
    "evaluate_policy",
    "extract_front",
    "frame_accounting",
    "full_scale",
    "hypervolume_2d",
    "make_env",
    "mixed_advantage",
    "mlp",
    "non_dominated",
    "regression_weight",
    "run_stage",
    "select_gap",
    "sparsity",
    "train_offspring",
    "train_secondary_posthoc",
    "train_specialist",
]

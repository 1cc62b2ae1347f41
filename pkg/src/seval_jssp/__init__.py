"""Subset-scoring schedulers for the job-shop problem.

Pipeline: exact-solver-labeled supervised data, a subset-proposing policy
over a typed scheduling graph, a subset-scoring model, and benchmark
tooling against dispatching-rule and exact baselines.
"""

from .instance import (
    JsspInstance,
    ParseError,
    Schedule,
    generate_instance,
    makespan,
    optimal_gap,
    parse_standard,
    parse_taillard,
    validate_schedule,
)
from .state import (
    AssignmentSubset,
    FeasibleAssignment,
    SchedState,
    apply_subset,
    enumerate_action_space,
    feasible_assignments,
    init_state,
    is_terminal,
    to_schedule,
)
from .oracle import SolveResult, brute_force_small, dispatch_solve, solve_exact
from .dataset import (
    DatasetManifest,
    TrajectorySample,
    build_dataset,
    extract_trajectory,
    perturb_and_extract,
)
from .model import (
    ModelConfig,
    SevalModel,
    gradient_check,
    kl_policy_loss,
    load_checkpoint,
    mse_self_eval_loss,
    save_checkpoint,
    true_score,
)
from .engine import (
    TrainConfig,
    greedy_rollout,
    sample_candidate_subsets,
    sample_training_subsets,
    seval_rollout,
    train,
)
from .bench import BenchReport, emit_artifacts, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "JsspInstance", "ParseError", "Schedule", "generate_instance", "makespan",
    "optimal_gap", "parse_standard", "parse_taillard", "validate_schedule",
    "AssignmentSubset", "FeasibleAssignment", "SchedState", "apply_subset",
    "enumerate_action_space", "feasible_assignments", "init_state",
    "is_terminal", "to_schedule",
    "SolveResult", "brute_force_small", "dispatch_solve", "solve_exact",
    "DatasetManifest", "TrajectorySample", "build_dataset",
    "extract_trajectory", "perturb_and_extract",
    "ModelConfig", "SevalModel", "gradient_check", "kl_policy_loss",
    "load_checkpoint", "mse_self_eval_loss", "save_checkpoint", "true_score",
    "TrainConfig", "greedy_rollout", "sample_candidate_subsets",
    "sample_training_subsets", "seval_rollout", "train",
    "BenchReport", "emit_artifacts", "run_benchmark",
]

"""Group relative policy optimization on a small tabular policy."""

from .objective import (
    GroupRollouts,
    GroupTooSmall,
    ShapeMismatch,
    grpo_gradient,
    grpo_objective,
    group_advantages,
    kl_token,
    objective_and_gradient,
)
from .policy import ActionGrammar, DisallowedToken, ToyPolicy, UnknownToken, decode, sample_group, token_logprob
from .trainer import (
    KL_PROBE_LEARNING_RATE,
    CheckpointError,
    GrpoConfig,
    TrainingPrompt,
    TrainingReport,
    load_checkpoint,
    make_policy,
    prompts_from_trajectories,
    save_checkpoint,
    toy_config,
    train,
)

__all__ = [
    "KL_PROBE_LEARNING_RATE",
    "CheckpointError",
    "ActionGrammar",
    "DisallowedToken",
    "GroupRollouts",
    "GroupTooSmall",
    "GrpoConfig",
    "ShapeMismatch",
    "ToyPolicy",
    "TrainingPrompt",
    "TrainingReport",
    "UnknownToken",
    "decode",
    "group_advantages",
    "grpo_gradient",
    "grpo_objective",
    "kl_token",
    "load_checkpoint",
    "make_policy",
    "objective_and_gradient",
    "prompts_from_trajectories",
    "sample_group",
    "save_checkpoint",
    "token_logprob",
    "toy_config",
    "train",
]

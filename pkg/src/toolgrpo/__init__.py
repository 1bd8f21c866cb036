"""Reinforcement learning of query-conditioned tool selection for a frozen reasoner."""

from .core import (
    AnswerKind,
    Dataset,
    DatasetHeader,
    EpisodeRecord,
    Query,
    RunConfig,
    ToolLibrary,
    ToolSelection,
    ToolSpec,
    read_dataset,
    validate_dataset,
    write_dataset,
)
from .grpo import IterationStats, kl_estimate, surrogate_term, train
from .metrics import EvalReport, evaluate_policy, pseudo_upper_bound, usage_performance_correlation
from .policy import PolicyParams, log_prob, log_prob_gradient, sample_selection, tool_probabilities
from .reward import GroupSample, group_advantages, tool_aware_reward

__version__ = "0.1.0"

__all__ = [
    "AnswerKind",
    "Dataset",
    "DatasetHeader",
    "EpisodeRecord",
    "EvalReport",
    "GroupSample",
    "IterationStats",
    "PolicyParams",
    "Query",
    "RunConfig",
    "ToolLibrary",
    "ToolSelection",
    "ToolSpec",
    "evaluate_policy",
    "group_advantages",
    "kl_estimate",
    "log_prob",
    "log_prob_gradient",
    "pseudo_upper_bound",
    "read_dataset",
    "sample_selection",
    "surrogate_term",
    "tool_aware_reward",
    "tool_probabilities",
    "train",
    "usage_performance_correlation",
    "validate_dataset",
    "write_dataset",
]

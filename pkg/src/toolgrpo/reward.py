"""Tool-aware reward and group-relative advantages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EpisodeRecord

# (tools help, tools hurt, no change, tools neutral)
DEFAULT_REWARDS: tuple[float, float, float, float] = (1.0, -0.5, 0.0, 1.0)


def tool_aware_reward(
    correct_direct: bool,
    correct_augmented: bool,
    values: Sequence[float] = DEFAULT_REWARDS,
) -> float:
    """Reward a candidate by how the tool outputs changed the reasoner's correctness."""
    help_, hurt, no_change, neutral = values
    if correct_augmented:
        return float(neutral if correct_direct else help_)
    return float(hurt if correct_direct else no_change)


def group_advantages(rewards: Sequence[float], threshold: float = 1e-8) -> np.ndarray:
    """Normalize rewards within a group by population mean and std.

    Groups whose std falls below ``threshold`` carry no ranking signal and get
    all-zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"group advantages need at least 2 rewards, got {r.size}")
    std = r.std()
    if std < threshold:
        return np.zeros_like(r)
    return (r - r.mean()) / std


@dataclass(frozen=True)
class GroupSample:
    query_id: str
    candidates: tuple[EpisodeRecord, ...]
    old_log_probs: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray

    def __post_init__(self) -> None:
        G = len(self.candidates)
        for name in ("old_log_probs", "rewards", "advantages"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (G,):
                raise ValueError(f"{name} must have length {G}")
            object.__setattr__(self, name, arr)

    @property
    def G(self) -> int:
        return len(self.candidates)

    @classmethod
    def build(
        cls,
        query_id: str,
        candidates: Sequence[EpisodeRecord],
        old_log_probs: Sequence[float],
        threshold: float = 1e-8,
    ) -> "GroupSample":
        rewards = np.array([c.reward for c in candidates], dtype=float)
        return cls(query_id, tuple(candidates), np.asarray(old_log_probs, dtype=float), rewards,
                   group_advantages(rewards, threshold))

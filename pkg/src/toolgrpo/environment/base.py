from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from ..core import EpisodeRecord, Query, ToolSelection
from ..matching import relaxed_match
from ..reward import DEFAULT_REWARDS, tool_aware_reward

log = logging.getLogger(__name__)


class EnvironmentFailure(RuntimeError):
    """A tool or reasoner call failed after exhausting retries."""


class EpisodeFailure(RuntimeError):
    """An episode could not be completed; callers drop it from its group."""

    def __init__(self, query_id: str, selection: ToolSelection, cause: Exception):
        super().__init__(f"episode for {query_id!r} with tools {selection.indices} failed: {cause}")
        self.query_id = query_id
        self.selection = selection
        self.cause = cause


@dataclass(frozen=True)
class ReasonerVerdict:
    answer: str
    # Set by the simulator; remote answers are judged client-side.
    correct: bool | None = None


class Environment(Protocol):
    num_tools: int

    def execute_tool(self, tool_index: int, query: Query) -> str: ...

    def reason(
        self,
        query: Query,
        selection: ToolSelection,
        tool_outputs: Sequence[str],
        rng: np.random.Generator,
    ) -> ReasonerVerdict: ...


Metric = Callable[[str, str], bool]


def judge(verdict: ReasonerVerdict, query: Query, metric: Metric = relaxed_match) -> bool:
    if verdict.correct is not None:
        return verdict.correct
    return metric(verdict.answer, query.gold_answer)


def direct_answer(env: Environment, query: Query, rng: np.random.Generator) -> ReasonerVerdict:
    """Reasoner prediction from the query alone."""
    return env.reason(query, ToolSelection(), (), rng)


class DirectCache:
    """Per-iteration cache of direct-path verdicts, keyed by query id."""

    def __init__(self) -> None:
        self._store: dict[str, ReasonerVerdict] = {}
        self.hits = 0
        self.misses = 0

    def get(self, env: Environment, query: Query, rng: np.random.Generator) -> ReasonerVerdict:
        if query.id in self._store:
            self.hits += 1
            return self._store[query.id]
        self.misses += 1
        verdict = direct_answer(env, query, rng)
        self._store[query.id] = verdict
        return verdict


def augmented_answer(
    env: Environment, query: Query, selection: ToolSelection, rng: np.random.Generator
) -> tuple[tuple[str, ...], ReasonerVerdict]:
    outputs = tuple(env.execute_tool(i, query) for i in selection.indices)
    return outputs, env.reason(query, selection, outputs, rng)


def run_episode(
    query: Query,
    selection: ToolSelection,
    env: Environment,
    rng: np.random.Generator,
    *,
    direct: ReasonerVerdict | None = None,
    direct_rng: np.random.Generator | None = None,
    metric: Metric = relaxed_match,
    reward_values: Sequence[float] = DEFAULT_REWARDS,
) -> EpisodeRecord:
    """Run tools, query the reasoner on both paths, and score the candidate.

    ``direct`` is a precomputed direct-path verdict (shared across a group);
    without it the direct path is evaluated here with ``direct_rng``.
    """
    selection.validate(env.num_tools)
    try:
        if direct is None:
            direct = direct_answer(env, query, direct_rng if direct_rng is not None else rng)
        outputs, augmented = augmented_answer(env, query, selection, rng)
    except EnvironmentFailure as exc:
        log.warning("episode failed for query %s: %s", query.id, exc)
        raise EpisodeFailure(query.id, selection, exc) from exc
    ok_direct = judge(direct, query, metric)
    ok_aug = judge(augmented, query, metric)
    return EpisodeRecord(
        query_id=query.id,
        selection=selection,
        tool_outputs=outputs,
        answer_direct=direct.answer,
        answer_augmented=augmented.answer,
        reward=tool_aware_reward(ok_direct, ok_aug, reward_values),
        correct_direct=ok_direct,
        correct_augmented=ok_aug,
    )

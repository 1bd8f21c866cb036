"""Logistic-additive stand-in for the frozen reasoner and its tools.

The reasoner answers a query correctly with probability
``sigmoid(base_logit + sum(u_i for selected i) - clutter * K)``. In
deterministic mode the answer is correct iff that probability is >= 0.5.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import Query, ToolLibrary, ToolSelection
from .base import ReasonerVerdict

GOLD = "GOLD"
WRONG = "WRONG"


@dataclass(frozen=True)
class SimProfile:
    base_logit: float
    tool_utilities: tuple[float, ...]
    clutter: float = 0.0
    deterministic: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tool_utilities", tuple(float(u) for u in self.tool_utilities))
        values = (self.base_logit, self.clutter, *self.tool_utilities)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("simulator profile entries must be finite")
        if self.clutter < 0:
            raise ValueError("clutter must be >= 0")

    def logit(self, selection: ToolSelection) -> float:
        total = self.base_logit
        for i in selection.indices:
            total += self.tool_utilities[i]
        return total - self.clutter * selection.K


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sim_correctness_probability(profile: SimProfile, selection: ToolSelection) -> float:
    selection.validate(len(profile.tool_utilities))
    return _logistic(profile.logit(selection))


def sim_is_correct(profile: SimProfile, selection: ToolSelection, rng: np.random.Generator | None) -> bool:
    if profile.deterministic:
        return profile.logit(selection) >= 0.0
    if rng is None:
        raise ValueError("stochastic simulator needs an rng stream")
    return bool(rng.random() < sim_correctness_probability(profile, selection))


class Simulator:
    """Environment backed by per-query simulator profiles."""

    def __init__(self, profiles: Mapping[str, SimProfile], library: ToolLibrary):
        self.profiles = dict(profiles)
        self.library = library
        self.num_tools = library.M
        for qid, prof in self.profiles.items():
            if len(prof.tool_utilities) != library.M:
                raise ValueError(f"profile {qid!r} has {len(prof.tool_utilities)} utilities, library has {library.M}")

    def with_mode(self, deterministic: bool) -> "Simulator":
        profiles = {k: replace(p, deterministic=deterministic) for k, p in self.profiles.items()}
        return Simulator(profiles, self.library)

    def profile(self, query: Query) -> SimProfile:
        try:
            return self.profiles[query.id]
        except KeyError:
            raise KeyError(f"no simulator profile for query {query.id!r}") from None

    def execute_tool(self, tool_index: int, query: Query) -> str:
        tool = self.library[tool_index]
        return f"[{tool.category}:{tool.name}] output for {query.id}"

    def reason(
        self,
        query: Query,
        selection: ToolSelection,
        tool_outputs: Sequence[str],
        rng: np.random.Generator,
    ) -> ReasonerVerdict:
        if len(tool_outputs) != selection.K:
            raise ValueError("one tool output per selected tool is required")
        ok = sim_is_correct(self.profile(query), selection, rng)
        return ReasonerVerdict(GOLD if ok else WRONG, ok)


# -- profile file -------------------------------------------------------------


def write_profiles(path: str | Path, profiles: Mapping[str, SimProfile]) -> None:
    tool_count = len(next(iter(profiles.values())).tool_utilities) if profiles else 0
    lines = [json.dumps({"tool_count": tool_count}, sort_keys=True)]
    for qid, p in profiles.items():
        record = {
            "query_id": qid,
            "base_logit": p.base_logit,
            "tool_utilities": list(p.tool_utilities),
            "clutter": p.clutter,
        }
        lines.append(json.dumps(record, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_profiles(path: str | Path, deterministic: bool = False) -> dict[str, SimProfile]:
    raw = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    header = json.loads(raw[0])
    out: dict[str, SimProfile] = {}
    for ln in raw[1:]:
        rec = json.loads(ln)
        prof = SimProfile(rec["base_logit"], rec["tool_utilities"], rec["clutter"], deterministic)
        if len(prof.tool_utilities) != header["tool_count"]:
            raise ValueError(f"{path}: profile {rec['query_id']!r} does not match tool_count")
        out[rec["query_id"]] = prof
    return out


def best_selection(profile: SimProfile) -> ToolSelection:
    """Selection maximizing the simulator's correctness probability: every tool worth its clutter cost."""
    return ToolSelection(tuple(i for i, u in enumerate(profile.tool_utilities) if u > profile.clutter))

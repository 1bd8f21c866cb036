"""Synthetic query/profile generator with closed-form reference accuracies.

Queries fall into segments. Each helpful tool lifts the reasoner on one
segment only, and the segment is encoded in the query features (scaled by
``coupling``), so a feature-conditioned selector can beat any fixed tool.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import AnswerKind, Dataset, DatasetHeader, Query, ToolLibrary, ToolSelection, ToolSpec
from .simulator import SimProfile, best_selection

ARCHETYPES = ("helpful", "harmful", "neutral")


@dataclass(frozen=True)
class ToolArchetype:
    name: str
    category: str
    kind: str
    strength: float = 0.0
    segment: int | None = None  # helpful tools: segment they lift; None lifts every segment
    off_strength: float = 0.0  # helpful tools: utility outside their segment

    def __post_init__(self) -> None:
        if self.kind not in ARCHETYPES:
            raise ValueError(f"unknown tool archetype {self.kind!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    tools: tuple[ToolArchetype, ...]
    feature_dim: int = 16
    num_train: int = 800
    num_eval: int = 400
    num_segments: int = 2
    easy_fraction: float = 0.6
    easy_logit: float = 1.5
    hard_logit: float = -1.5
    logit_jitter: float = 0.8
    utility_jitter: float = 0.2
    clutter: float = 0.4
    coupling: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "tools", tuple(t if isinstance(t, ToolArchetype) else ToolArchetype(**t) for t in self.tools)
        )
        if not self.tools:
            raise ValueError("generator needs at least one tool")
        if self.num_segments < 1:
            raise ValueError("num_segments must be >= 1")
        if self.coupling != 0 and self.num_segments > self.feature_dim:
            raise ValueError(
                f"{self.num_segments} segments cannot be encoded in {self.feature_dim} feature dimensions"
            )
        for t in self.tools:
            if t.segment is not None and not 0 <= t.segment < self.num_segments:
                raise ValueError(f"tool {t.name!r} targets segment {t.segment}, only {self.num_segments} exist")
        if not 0.0 <= self.easy_fraction <= 1.0:
            raise ValueError("easy_fraction must lie in [0, 1]")
        if self.clutter < 0 or self.logit_jitter < 0 or self.utility_jitter < 0:
            raise ValueError("clutter and jitter scales must be >= 0")
        if self.num_train < 0 or self.num_eval < 0 or self.feature_dim < 1:
            raise ValueError("query counts must be >= 0 and feature_dim >= 1")

    @property
    def num_tools(self) -> int:
        return len(self.tools)

    def library(self) -> ToolLibrary:
        return ToolLibrary(tuple(ToolSpec(i, t.category, t.name) for i, t in enumerate(self.tools)))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tools"] = [asdict(t) for t in self.tools]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorConfig":
        data = dict(data)
        data["tools"] = tuple(ToolArchetype(**t) for t in data["tools"])
        return cls(**data)


@dataclass
class ClosedForm:
    """Reference accuracies computed analytically from the profiles.

    ``deterministic`` entries are exact fractions for the thresholded
    simulator; ``expected`` entries are the mean success probabilities of
    the stochastic simulator.
    """

    deterministic: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"deterministic": self.deterministic, "expected": self.expected}


def closed_form_accuracies(profiles: Sequence[SimProfile]) -> ClosedForm:
    if not profiles:
        raise ValueError("closed form needs at least one profile")
    M = len(profiles[0].tool_utilities)
    base = np.array([p.base_logit for p in profiles])
    util = np.array([p.tool_utilities for p in profiles])
    lam = np.array([p.clutter for p in profiles])

    def sig(z: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-z))

    single = base[:, None] + util - lam[:, None]
    all_tools = base + util.sum(axis=1) - lam * M
    oracle = np.array([p.logit(best_selection(p)) for p in profiles])
    det = {
        "no_tool": float(np.mean(base >= 0)),
        "single_tool": [float(v) for v in np.mean(single >= 0, axis=0)],
        "all_tools": float(np.mean(all_tools >= 0)),
        "oracle": float(np.mean(oracle >= 0)),
        "pseudo_upper_bound": float(np.mean(np.any(single >= 0, axis=1))),
    }
    p_single = sig(single)
    exp = {
        "no_tool": float(np.mean(sig(base))),
        "single_tool": [float(v) for v in p_single.mean(axis=0)],
        "all_tools": float(np.mean(sig(all_tools))),
        "oracle": float(np.mean(sig(oracle))),
        # independent draws per tool
        "pseudo_upper_bound": float(np.mean(1.0 - np.prod(1.0 - p_single, axis=1))),
    }
    return ClosedForm(det, exp)


@dataclass
class SyntheticData:
    config: GeneratorConfig
    library: ToolLibrary
    train: Dataset
    eval: Dataset
    profiles: dict[str, SimProfile]
    segments: dict[str, int]
    closed_form: dict[str, ClosedForm]


def _tool_utility(tool: ToolArchetype, segment: int) -> float:
    if tool.kind == "helpful":
        if tool.segment is None or tool.segment == segment:
            return tool.strength
        return tool.off_strength
    if tool.kind == "harmful":
        return -abs(tool.strength)
    return 0.0


def _make_split(
    cfg: GeneratorConfig, prefix: str, n: int, rng: np.random.Generator
) -> tuple[list[Query], dict[str, SimProfile], dict[str, int]]:
    queries: list[Query] = []
    profiles: dict[str, SimProfile] = {}
    segments: dict[str, int] = {}
    width = max(4, len(str(max(n - 1, 0))))
    for k in range(n):
        qid = f"{prefix}-{k:0{width}d}"
        seg = int(rng.integers(cfg.num_segments))
        easy = bool(rng.random() < cfg.easy_fraction)
        x = rng.standard_normal(cfg.feature_dim)
        if cfg.coupling:
            x[seg] += cfg.coupling
        base = (cfg.easy_logit if easy else cfg.hard_logit) + cfg.logit_jitter * rng.standard_normal()
        util = [_tool_utility(t, seg) + cfg.utility_jitter * rng.standard_normal() for t in cfg.tools]
        gold = f"{rng.integers(1, 1000) / 10:.1f}"
        queries.append(
            Query(
                id=qid,
                text=f"What is the value of series {seg} at point {k}?",
                features=np.round(x, 6),
                gold_answer=gold,
                answer_kind=AnswerKind.NUMERIC,
                image_ref=f"synthetic://{qid}.png",
            )
        )
        profiles[qid] = SimProfile(round(float(base), 6), tuple(round(float(u), 6) for u in util), cfg.clutter)
        segments[qid] = seg
    return queries, profiles, segments


def generate_synthetic_dataset(cfg: GeneratorConfig, rng: np.random.Generator | None = None) -> SyntheticData:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    header = DatasetHeader(cfg.feature_dim, cfg.num_tools, AnswerKind.NUMERIC.value)
    train_q, train_p, train_s = _make_split(cfg, "train", cfg.num_train, rng)
    eval_q, eval_p, eval_s = _make_split(cfg, "eval", cfg.num_eval, rng)
    closed = {}
    if train_p:
        closed["train"] = closed_form_accuracies(list(train_p.values()))
    if eval_p:
        closed["eval"] = closed_form_accuracies(list(eval_p.values()))
    return SyntheticData(
        config=cfg,
        library=cfg.library(),
        train=Dataset(header, train_q),
        eval=Dataset(header, eval_q),
        profiles={**train_p, **eval_p},
        segments={**train_s, **eval_s},
        closed_form=closed,
    )


def write_closed_form(json_path: str | Path, csv_path: str | Path, closed: Mapping[str, ClosedForm]) -> None:
    Path(json_path).write_text(json.dumps({k: v.to_dict() for k, v in closed.items()}, indent=2, sort_keys=True) + "\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["split", "row", "deterministic", "expected"])
        for split, cf in closed.items():
            M = len(cf.deterministic["single_tool"])
            rows = [("no-tool", "no_tool", None)]
            rows += [(f"T{i}", "single_tool", i) for i in range(M)]
            rows += [("all", "all_tools", None), ("oracle", "oracle", None), ("upper", "pseudo_upper_bound", None)]
            for label, key, idx in rows:
                det, exp = cf.deterministic[key], cf.expected[key]
                if idx is not None:
                    det, exp = det[idx], exp[idx]
                writer.writerow([split, label, repr(det), repr(exp)])


def chart_library_config(**overrides) -> GeneratorConfig:
    """Nine tools in three categories; tools 1 and 2 lift disjoint query halves."""
    tools = (
        ToolArchetype("table-a", "type1", "neutral"),
        ToolArchetype("table-b", "type1", "helpful", strength=4.0, segment=0),
        ToolArchetype("table-c", "type1", "helpful", strength=4.0, segment=1),
        ToolArchetype("svg-a", "type2", "harmful", strength=1.0),
        ToolArchetype("svg-b", "type2", "harmful", strength=0.4),
        ToolArchetype("svg-c", "type2", "neutral"),
        ToolArchetype("caption-a", "type3", "harmful", strength=1.5),
        ToolArchetype("caption-b", "type3", "helpful", strength=0.9),
        ToolArchetype("caption-c", "type3", "harmful", strength=0.7),
    )
    return GeneratorConfig(tools=tools, **overrides)


def geometry_library_config(**overrides) -> GeneratorConfig:
    """Four tools in two categories: two parsers, two solvers."""
    tools = (
        ToolArchetype("parser-a", "parser", "helpful", strength=3.0, segment=0),
        ToolArchetype("parser-b", "parser", "neutral"),
        ToolArchetype("solver-a", "solver", "helpful", strength=3.0, segment=1),
        ToolArchetype("solver-b", "solver", "harmful", strength=1.0),
    )
    return GeneratorConfig(tools=tools, **overrides)


def selection_accuracy(profiles: Sequence[SimProfile], selections: Sequence[ToolSelection]) -> float:
    """Deterministic-mode accuracy of fixed per-query selections."""
    return float(np.mean([p.logit(s) >= 0 for p, s in zip(profiles, selections)]))

"""Evaluation, baselines, and tool-usage diagnostics."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Dataset, Query, ToolLibrary, ToolSelection
from .environment.base import Environment, EnvironmentFailure, Metric, augmented_answer, judge
from .grpo import query_key, stream
from .matching import exact_match, get_metric, relaxed_match
from .policy import PolicyParams, greedy_selection, sample_selection, tool_probabilities

log = logging.getLogger(__name__)

_EVAL, _RANDOM_K, _POLICY_SAMPLE = 11, 12, 13

__all__ = [
    "EvalReport",
    "UndefinedCorrelation",
    "baseline_all_tools",
    "baseline_no_tool",
    "baseline_random_k",
    "comparison_table",
    "correlation_series",
    "evaluate_policy",
    "evaluate_selections",
    "exact_match",
    "expected_selection_distribution",
    "get_metric",
    "greedy_selection_distribution",
    "pseudo_upper_bound",
    "relaxed_match",
    "single_tool_accuracies",
    "usage_performance_correlation",
]


class UndefinedCorrelation(ValueError):
    """Pearson correlation requested for a constant vector."""


@dataclass(frozen=True)
class EvalReport:
    label: str
    accuracy: float
    verdicts: tuple[tuple[str, bool], ...]
    mean_tools: float
    usage_frequency: tuple[float, ...]
    no_tool_frequency: float
    failed: int = 0

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "accuracy": self.accuracy,
            "mean_tools": self.mean_tools,
            "usage_frequency": list(self.usage_frequency),
            "no_tool_frequency": self.no_tool_frequency,
            "failed": self.failed,
            "n": len(self.verdicts),
        }

    def verdict_vector(self) -> np.ndarray:
        return np.array([v for _, v in self.verdicts], dtype=bool)


def evaluate_selections(
    dataset: Dataset | Sequence[Query],
    environment: Environment,
    select: Callable[[Query], ToolSelection],
    *,
    label: str = "ours",
    metric: Metric = relaxed_match,
    seed: int = 0,
    workers: int = 1,
) -> EvalReport:
    """Score the tool-augmented path for a per-query selection rule.

    Every strategy sees the same per-query reasoner stream, so stochastic
    environments compare strategies on common random numbers.
    """
    queries = list(dataset)
    M = environment.num_tools

    def one(q: Query) -> tuple[ToolSelection, bool | None]:
        sel = select(q)
        try:
            _, verdict = augmented_answer(environment, q, sel, stream(seed, _EVAL, query_key(q.id)))
        except EnvironmentFailure as exc:
            log.warning("evaluation of %s failed: %s", q.id, exc)
            return sel, None
        return sel, judge(verdict, q, metric)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, queries))
    else:
        results = [one(q) for q in queries]

    verdicts, usage, sizes = [], np.zeros(M), []
    failed = 0
    for q, (sel, ok) in zip(queries, results):
        if ok is None:
            failed += 1
            continue
        verdicts.append((q.id, bool(ok)))
        usage[list(sel.indices)] += 1
        sizes.append(sel.K)
    if failed:
        log.warning("%s: %d queries failed and were excluded", label, failed)
    n = len(verdicts)
    acc = float(np.mean([v for _, v in verdicts])) if n else 0.0
    return EvalReport(
        label=label,
        accuracy=acc,
        verdicts=tuple(verdicts),
        mean_tools=float(np.mean(sizes)) if n else 0.0,
        usage_frequency=tuple(float(u / n) if n else 0.0 for u in usage),
        no_tool_frequency=float(np.mean([k == 0 for k in sizes])) if n else 0.0,
        failed=failed,
    )


def evaluate_policy(
    policy: PolicyParams,
    dataset: Dataset | Sequence[Query],
    library: ToolLibrary,
    environment: Environment,
    *,
    sample: bool = False,
    metric: Metric = relaxed_match,
    seed: int = 0,
    workers: int = 1,
    label: str = "ours",
) -> EvalReport:
    """Accuracy of the tool-augmented path under the policy's selections.

    By default tools are included iff their probability is at least 0.5;
    ``sample=True`` draws selections from the policy instead.
    """
    if sample:
        def select(q: Query) -> ToolSelection:
            return sample_selection(policy, q, stream(seed, _POLICY_SAMPLE, query_key(q.id)))[0]
    else:
        def select(q: Query) -> ToolSelection:
            return greedy_selection(policy, q)

    return evaluate_selections(dataset, environment, select, label=label, metric=metric, seed=seed, workers=workers)


def baseline_no_tool(dataset, library: ToolLibrary, environment: Environment, **kw) -> EvalReport:
    return evaluate_selections(dataset, environment, lambda q: ToolSelection(), label="no-tool", **kw)


def baseline_all_tools(dataset, library: ToolLibrary, environment: Environment, **kw) -> EvalReport:
    everything = ToolSelection(tuple(range(library.M)))
    return evaluate_selections(dataset, environment, lambda q: everything, label="all", **kw)


def baseline_random_k(
    dataset, library: ToolLibrary, environment: Environment, k: int = 2, rng_seed: int = 0, **kw
) -> EvalReport:
    """Uniformly random k-subset per query, drawn from a per-query stream."""
    if not 0 <= k <= library.M:
        raise ValueError(f"k={k} must lie in [0, {library.M}]")

    def select(q: Query) -> ToolSelection:
        rng = stream(rng_seed, _RANDOM_K, k, query_key(q.id))
        return ToolSelection.of(rng.choice(library.M, size=k, replace=False), library.M)

    return evaluate_selections(dataset, environment, select, label=f"random-{k}", **kw)


def single_tool_accuracies(
    dataset, library: ToolLibrary, environment: Environment, **kw
) -> tuple[np.ndarray, np.ndarray, list[EvalReport]]:
    """Accuracy with each fixed singleton selection.

    Returns the length-M accuracy vector, the M x N verdict matrix (queries
    that failed for any tool are dropped from the matrix), and the reports.
    """
    reports = [
        evaluate_selections(dataset, environment, lambda q, i=i: ToolSelection((i,)), label=f"T{i}", **kw)
        for i in range(library.M)
    ]
    common = set.intersection(*(set(qid for qid, _ in r.verdicts) for r in reports))
    order = [q.id for q in dataset if q.id in common]
    lookups = [dict(r.verdicts) for r in reports]
    matrix = np.array([[lk[qid] for qid in order] for lk in lookups], dtype=bool)
    return np.array([r.accuracy for r in reports]), matrix, reports


def pseudo_upper_bound(per_tool_verdicts: Sequence[Sequence[bool]] | np.ndarray) -> float:
    """Fraction of queries that at least one single tool answers correctly."""
    rows = [list(r) for r in per_tool_verdicts]
    if not rows:
        raise ValueError("verdict matrix needs at least one tool row")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("verdict matrix is ragged")
    mat = np.array(rows, dtype=bool)
    if mat.shape[1] == 0:
        raise ValueError("verdict matrix has no queries")
    return float(np.mean(mat.any(axis=0)))


def usage_performance_correlation(usage_counts: Sequence[float], standalone_acc: Sequence[float]) -> float:
    u = np.asarray(usage_counts, dtype=float)
    a = np.asarray(standalone_acc, dtype=float)
    if u.shape != a.shape or u.ndim != 1 or u.size < 2:
        raise ValueError("need two equal-length vectors with at least 2 tools")
    du, da = u - u.mean(), a - a.mean()
    su, sa = np.sqrt(du @ du), np.sqrt(da @ da)
    scale = max(np.abs(u).max(), 1.0) * 1e-12
    if su <= scale * np.sqrt(u.size) or sa == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant vector")
    return float(np.clip((du @ da) / (su * sa), -1.0, 1.0))


def expected_usage(params: PolicyParams, dataset: Sequence[Query]) -> np.ndarray:
    """Expected number of queries selecting each tool when sampling from the policy."""
    return np.sum([tool_probabilities(params, q) for q in dataset], axis=0)


def greedy_selection_distribution(params: PolicyParams, dataset: Sequence[Query]) -> dict:
    masks = np.array([greedy_selection(params, q).mask(params.M) for q in dataset], dtype=float)
    return {
        "usage_frequency": [float(v) for v in masks.mean(axis=0)],
        "no_tool_frequency": float(np.mean(masks.sum(axis=1) == 0)),
        "mean_tools": float(masks.sum(axis=1).mean()),
    }


def expected_selection_distribution(params: PolicyParams, dataset: Sequence[Query]) -> dict:
    """Per-tool inclusion frequency when sampling from the policy."""
    probs = np.array([tool_probabilities(params, q) for q in dataset])
    return {
        "usage_frequency": [float(v) for v in probs.mean(axis=0)],
        "no_tool_frequency": float(np.mean(np.prod(1.0 - probs, axis=1))),
        "mean_tools": float(probs.sum(axis=1).mean()),
    }


def correlation_series(
    snapshots: Mapping[int, PolicyParams], dataset: Sequence[Query], standalone_acc: Sequence[float]
) -> list[dict]:
    """Usage/accuracy Pearson correlation at each snapshot iteration.

    Usage is the policy's expected per-tool selection count over ``dataset``.
    A policy with identical usage for every tool has zero covariance with
    accuracy; those points are reported as 0.0 and flagged ``degenerate``.
    """
    series = []
    for it in sorted(snapshots):
        usage = expected_usage(snapshots[it], dataset)
        try:
            r, degenerate = usage_performance_correlation(usage, standalone_acc), False
        except UndefinedCorrelation:
            r, degenerate = 0.0, True
        series.append(
            {"iteration": it, "correlation": r, "degenerate": degenerate, "usage": [float(v) for v in usage]}
        )
    return series


def exhaustive_random_k_accuracy(
    correct: Callable[[Query, ToolSelection], bool], dataset: Sequence[Query], num_tools: int, k: int
) -> float:
    """Exact expected accuracy of the random-k baseline by enumerating every k-subset."""
    subsets = [ToolSelection(c) for c in combinations(range(num_tools), k)]
    return float(np.mean([np.mean([correct(q, s) for s in subsets]) for q in dataset]))


# -- report files -------------------------------------------------------------


def comparison_table(rows: Sequence[tuple[str, float]]) -> list[dict]:
    return [{"row": name, "accuracy": float(acc)} for name, acc in rows]


def write_table(csv_path: str | Path, json_path: str | Path, rows: Sequence[tuple[str, float]], extra: dict | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "accuracy"])
        for name, acc in rows:
            writer.writerow([name, repr(float(acc))])
    payload = {"rows": comparison_table(rows)}
    if extra:
        payload.update(extra)
    Path(json_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

"""Domain types shared across the package: queries, tool banks, selections, episodes, run config."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset file or record set is malformed."""


class AnswerKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


def parse_number(text: str) -> float | None:
    """Parse a chart-style numeric answer, stripping '%' and thousands separators.

    Returns None when the text is not a finite real number.
    """
    cleaned = text.strip().replace(",", "")
    if cleaned.endswith("%"):
        cleaned = cleaned[:-1].strip()
    if not cleaned:
        return None
    try:
        value = float(cleaned)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


@dataclass(frozen=True, eq=False)
class Query:
    id: str
    text: str
    features: np.ndarray
    gold_answer: str
    answer_kind: AnswerKind = AnswerKind.NUMERIC
    image_ref: str | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.features, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)
        object.__setattr__(self, "answer_kind", AnswerKind(self.answer_kind))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "features": [float(v) for v in self.features],
            "gold_answer": self.gold_answer,
            "answer_kind": self.answer_kind.value,
            "image_ref": self.image_ref,
        }

    @classmethod
    def from_dict(cls, data: dict, default_kind: str = "numeric") -> "Query":
        return cls(
            id=str(data["id"]),
            text=str(data.get("text", "")),
            features=data["features"],
            gold_answer=str(data["gold_answer"]),
            answer_kind=AnswerKind(data.get("answer_kind") or default_kind),
            image_ref=data.get("image_ref"),
        )


@dataclass(frozen=True)
class ToolSpec:
    index: int
    category: str
    name: str
    endpoint: str | None = None


@dataclass(frozen=True)
class ToolLibrary:
    tools: tuple[ToolSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tools", tuple(self.tools))
        if not self.tools:
            raise ValueError("tool library must contain at least one tool")
        for position, tool in enumerate(self.tools):
            if tool.index != position:
                raise ValueError(
                    f"tool indices must be 0..M-1 in order; position {position} has index {tool.index}"
                )

    @property
    def M(self) -> int:
        return len(self.tools)

    def __len__(self) -> int:
        return len(self.tools)

    def __getitem__(self, index: int) -> ToolSpec:
        return self.tools[index]

    @classmethod
    def from_names(cls, entries: Sequence[tuple[str, str]]) -> "ToolLibrary":
        """Build a library from (category, name) pairs, indexed in order."""
        return cls(tuple(ToolSpec(i, cat, name) for i, (cat, name) in enumerate(entries)))

    def to_dict(self) -> dict:
        return {"tools": [asdict(t) for t in self.tools]}

    @classmethod
    def from_dict(cls, data: dict) -> "ToolLibrary":
        return cls(tuple(ToolSpec(**t) for t in data["tools"]))


@dataclass(frozen=True)
class ToolSelection:
    """A canonical (strictly ascending, duplicate-free) subset of tool indices."""

    indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"selection indices must be strictly ascending: {idx}")
        if idx and idx[0] < 0:
            raise ValueError(f"negative tool index in selection: {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices: Iterable[int], num_tools: int) -> "ToolSelection":
        """Canonicalize arbitrary indices (sorting, deduplicating) and validate against M."""
        idx = sorted(set(int(i) for i in indices))
        sel = cls(tuple(idx))
        sel.validate(num_tools)
        return sel

    @classmethod
    def from_mask(cls, mask: Sequence[bool] | np.ndarray) -> "ToolSelection":
        return cls(tuple(int(i) for i in np.flatnonzero(np.asarray(mask, dtype=bool))))

    @property
    def K(self) -> int:
        return len(self.indices)

    def validate(self, num_tools: int) -> None:
        if self.indices and self.indices[-1] >= num_tools:
            raise ValueError(f"selection {self.indices} out of range for M={num_tools}")

    def mask(self, num_tools: int) -> np.ndarray:
        self.validate(num_tools)
        out = np.zeros(num_tools, dtype=bool)
        out[list(self.indices)] = True
        return out

    def serialize(self) -> str:
        return ",".join(str(i) for i in self.indices)

    @classmethod
    def parse(cls, text: str) -> "ToolSelection":
        text = text.strip()
        if not text:
            return cls()
        return cls(tuple(int(tok) for tok in text.split(",")))

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class EpisodeRecord:
    query_id: str
    selection: ToolSelection
    tool_outputs: tuple[str, ...]
    answer_direct: str
    answer_augmented: str
    reward: float
    correct_direct: bool
    correct_augmented: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "tool_outputs", tuple(self.tool_outputs))
        if len(self.tool_outputs) != self.selection.K:
            raise ValueError("tool_outputs length must equal selection size")


@dataclass(frozen=True)
class RunConfig:
    group_size: int = 4
    batch_size: int = 8
    learning_rate: float = 5e-5
    iterations: int = 100
    clip_epsilon: float = 0.2
    kl_beta: float = 0.04
    seed: int = 0
    degenerate_std_threshold: float = 1e-8
    # None keeps the reference frozen at the initial policy.
    reference_refresh: int | None = None
    optimizer: str = "sgd"
    weight_decay: float = 0.01
    reward_values: tuple[float, float, float, float] = (1.0, -0.5, 0.0, 1.0)
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "reward_values", tuple(float(v) for v in self.reward_values))
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be nonnegative")
        if not self.degenerate_std_threshold > 0:
            raise ValueError("degenerate_std_threshold must be positive")
        if self.reference_refresh is not None and self.reference_refresh < 1:
            raise ValueError("reference_refresh must be a positive iteration count")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if len(self.reward_values) != 4:
            raise ValueError("reward_values needs four entries (help, hurt, no change, neutral)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["reward_values"] = list(self.reward_values)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetHeader:
    feature_dim: int
    tool_count: int
    answer_kind_default: str = "numeric"


@dataclass(frozen=True)
class Violation:
    record: str
    kind: str
    message: str


@dataclass
class Dataset:
    header: DatasetHeader
    queries: list[Query] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def by_id(self) -> dict[str, Query]:
        return {q.id: q for q in self.queries}


def validate_dataset(records: Sequence[Query], feature_dim: int) -> list[Violation]:
    """Check records against the Query invariants; an empty list means well-formed."""
    report: list[Violation] = []
    seen: set[str] = set()
    for pos, q in enumerate(records):
        label = q.id or f"#{pos}"
        if q.id in seen:
            report.append(Violation(label, "duplicate_id", f"id {q.id!r} appears more than once"))
        seen.add(q.id)
        if q.features.ndim != 1 or q.features.shape[0] != feature_dim:
            report.append(
                Violation(label, "dimension", f"features have shape {q.features.shape}, expected ({feature_dim},)")
            )
        elif not np.all(np.isfinite(q.features)):
            report.append(Violation(label, "nonfinite_features", "features contain non-finite values"))
        if not q.gold_answer.strip():
            report.append(Violation(label, "empty_gold", "gold_answer is empty"))
        elif q.answer_kind is AnswerKind.NUMERIC and parse_number(q.gold_answer) is None:
            report.append(
                Violation(label, "numeric_gold", f"gold {q.gold_answer!r} is not a finite number")
            )
    return report


def write_dataset(path: str | Path, dataset: Dataset) -> None:
    lines = [json.dumps(asdict(dataset.header), sort_keys=True)]
    lines += [json.dumps(q.to_dict(), sort_keys=True) for q in dataset.queries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path, strict: bool = True) -> Dataset:
    """Read a header-prefixed JSON-lines dataset; strict mode raises on any violation."""
    raw = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not raw:
        raise DatasetError(f"{path}: empty dataset file")
    try:
        head = json.loads(raw[0])
        header = DatasetHeader(
            feature_dim=int(head["feature_dim"]),
            tool_count=int(head["tool_count"]),
            answer_kind_default=str(head.get("answer_kind_default", "numeric")),
        )
        queries = [Query.from_dict(json.loads(ln), header.answer_kind_default) for ln in raw[1:]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    if strict:
        report = validate_dataset(queries, header.feature_dim)
        if report:
            first = report[0]
            raise DatasetError(f"{path}: {len(report)} violation(s); first: {first.record}: {first.message}")
    return Dataset(header, queries)


def check_compatible(*headers: DatasetHeader) -> None:
    """Datasets mixed in one run must agree on feature dimension and tool count."""
    dims = {(h.feature_dim, h.tool_count) for h in headers}
    if len(dims) > 1:
        raise DatasetError(f"incompatible dataset headers (feature_dim, tool_count): {sorted(dims)}")

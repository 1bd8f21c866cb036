"""Query-conditioned tool-selection policy.

Each tool is included independently with probability ``sigmoid(w_i . x + b_i)``,
so the likelihood of a selection factorizes over tools and its gradient is
available in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Query, ToolSelection

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or dimension-mismatched policy checkpoints."""


@dataclass
class PolicyParams:
    weights: np.ndarray  # (M, d)
    biases: np.ndarray  # (M,)

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=float)
        self.biases = np.array(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"weights must be (M, d) and biases (M,); got {self.weights.shape} and {self.biases.shape}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("policy parameters must be finite")

    @classmethod
    def zeros(cls, num_tools: int, feature_dim: int) -> "PolicyParams":
        return cls(np.zeros((num_tools, feature_dim)), np.zeros(num_tools))

    @property
    def M(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.weights.copy(), self.biases.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.biases])

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_tools: int, feature_dim: int) -> "PolicyParams":
        split = num_tools * feature_dim
        return cls(vec[:split].reshape(num_tools, feature_dim), vec[split:])

    def allclose(self, other: "PolicyParams", atol: float = 0.0) -> bool:
        return np.allclose(self.weights, other.weights, rtol=0, atol=atol) and np.allclose(
            self.biases, other.biases, rtol=0, atol=atol
        )


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only copy of the parameters, tagged as the old or reference policy."""

    params: PolicyParams
    role: str

    def __post_init__(self) -> None:
        if self.role not in ("old", "reference"):
            raise ValueError(f"snapshot role must be 'old' or 'reference', not {self.role!r}")
        frozen = self.params.copy()
        frozen.weights.setflags(write=False)
        frozen.biases.setflags(write=False)
        object.__setattr__(self, "params", frozen)

    @classmethod
    def take(cls, params: PolicyParams, role: str) -> "PolicySnapshot":
        return cls(params, role)


def _logits(params: PolicyParams, query: Query) -> np.ndarray:
    x = query.features
    if x.shape != (params.d,):
        raise ValueError(f"query {query.id!r} has feature dim {x.shape}, policy expects ({params.d},)")
    return params.weights @ x + params.biases


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def tool_probabilities(params: PolicyParams, query: Query) -> np.ndarray:
    return _sigmoid(_logits(params, query))


def _log_prob_from_logits(z: np.ndarray, mask: np.ndarray) -> float:
    # ln p = -softplus(-z), ln(1-p) = -softplus(z)
    return float(-np.sum(np.where(mask, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))))


def sample_selection(
    params: PolicyParams, query: Query, rng: np.random.Generator
) -> tuple[ToolSelection, float]:
    z = _logits(params, query)
    mask = rng.random(params.M) < _sigmoid(z)
    return ToolSelection.from_mask(mask), _log_prob_from_logits(z, mask)


def log_prob(params: PolicyParams, query: Query, selection: ToolSelection) -> float:
    return _log_prob_from_logits(_logits(params, query), selection.mask(params.M))


def log_prob_gradient(params: PolicyParams, query: Query, selection: ToolSelection) -> PolicyParams:
    """Gradient of ``log_prob`` with respect to weights and biases."""
    mask = selection.mask(params.M)
    delta = mask.astype(float) - tool_probabilities(params, query)
    return PolicyParams(np.outer(delta, query.features), delta)


def greedy_selection(params: PolicyParams, query: Query) -> ToolSelection:
    """Deterministic evaluation-mode selection: include tool i iff p_i >= 0.5."""
    return ToolSelection.from_mask(_logits(params, query) >= 0.0)


# -- checkpoint file ----------------------------------------------------------


def save_checkpoint(path: str | Path, params: PolicyParams) -> None:
    header = {"M": params.M, "d": params.d, "format_version": CHECKPOINT_FORMAT_VERSION}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [" ".join(repr(float(v)) for v in row) for row in params.weights]
    lines.append(" ".join(repr(float(v)) for v in params.biases))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_checkpoint(
    path: str | Path, num_tools: int | None = None, feature_dim: int | None = None
) -> PolicyParams:
    lines = Path(path).read_text().splitlines()
    try:
        header = json.loads(lines[0])
        M, d = int(header["M"]), int(header["d"])
        version = int(header["format_version"])
    except (IndexError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header") from exc
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {version}")
    if num_tools is not None and M != num_tools:
        raise CheckpointError(f"{path}: checkpoint has M={M}, dataset has M={num_tools}")
    if feature_dim is not None and d != feature_dim:
        raise CheckpointError(f"{path}: checkpoint has d={d}, dataset has d={feature_dim}")
    body = lines[1:]
    if len(body) != M + 1:
        raise CheckpointError(f"{path}: expected {M + 1} data rows, found {len(body)}")
    try:
        weights = np.array([[float(v) for v in row.split()] for row in body[:M]]).reshape(M, d)
        biases = np.array([float(v) for v in body[M].split()])
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return PolicyParams(weights, biases)

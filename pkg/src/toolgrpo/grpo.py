"""Group-relative policy optimization of the tool selector.

Each iteration snapshots the current policy as the old policy, samples a
group of candidate selections per query, scores them through the
environment, normalizes rewards within each group, and takes one ascent
step on the clipped surrogate minus a KL penalty toward the reference
policy.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, Query, RunConfig, ToolLibrary, ToolSelection
from .environment.base import DirectCache, Environment, EnvironmentFailure, EpisodeFailure, Metric, run_episode
from .matching import relaxed_match
from .policy import PolicyParams, PolicySnapshot, load_checkpoint, log_prob, log_prob_gradient, sample_selection, save_checkpoint
from .reward import GroupSample

log = logging.getLogger(__name__)

# rng stream tags
_SAMPLE, _AUGMENTED, _DIRECT, _EPOCH = 1, 2, 3, 4


class TrainingAborted(RuntimeError):
    """An iteration could not complete; the last finished iteration is checkpointed."""


def surrogate_term(ratio: float, advantage: float, epsilon: float) -> float:
    if not ratio > 0:
        raise ValueError(f"probability ratio must be positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def _is_clipped(ratio: float, advantage: float, epsilon: float) -> bool:
    """True when the clipped branch is active, i.e. the term has zero gradient."""
    return (advantage > 0 and ratio > 1.0 + epsilon) or (advantage < 0 and ratio < 1.0 - epsilon)


def kl_estimate(log_prob_current: float, log_prob_ref: float) -> float:
    """Nonnegative sample estimate ``rho - ln(rho) - 1`` with ``rho = pi_ref / pi``."""
    log_rho = log_prob_ref - log_prob_current
    return math.expm1(log_rho) - log_rho


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, *keys])


def query_key(query_id: str) -> int:
    return zlib.crc32(query_id.encode("utf-8"))


def batch_indices(num_queries: int, batch_size: int, iteration: int, seed: int) -> list[int]:
    """Indices for one iteration's batch; each epoch is a fresh permutation."""
    out = []
    for pos in range(iteration * batch_size, (iteration + 1) * batch_size):
        epoch, offset = divmod(pos, num_queries)
        perm = stream(seed, _EPOCH, epoch).permutation(num_queries)
        out.append(int(perm[offset]))
    return out


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    mean_reward: float
    mean_abs_advantage: float
    clip_fraction: float
    mean_kl: float
    tool_usage: tuple[int, ...]
    groups: int
    failed_episodes: int
    objective_before: float
    objective_after: float

    def to_json(self) -> str:
        d = asdict(self)
        d["tool_usage"] = list(self.tool_usage)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "IterationStats":
        d = json.loads(line)
        d["tool_usage"] = tuple(d["tool_usage"])
        return cls(**d)


@dataclass
class Rollout:
    query: Query
    group: GroupSample
    ref_log_probs: np.ndarray


# -- reference policy ---------------------------------------------------------


class ReferencePolicy:
    """Frozen copy of the initial policy, optionally re-synced every ``refresh`` iterations."""

    def __init__(self, initial: PolicyParams, refresh: int | None = None):
        self.refresh = refresh
        self.snapshot = PolicySnapshot.take(initial, "reference")

    def update(self, iteration: int, params: PolicyParams) -> PolicySnapshot:
        """Called at the start of each iteration with the then-current parameters."""
        if self.refresh and iteration > 0 and iteration % self.refresh == 0:
            self.snapshot = PolicySnapshot.take(params, "reference")
        return self.snapshot


def reference_policy_mode(config: RunConfig, initial: PolicyParams) -> ReferencePolicy:
    return ReferencePolicy(initial, config.reference_refresh)


# -- optimizers ---------------------------------------------------------------


class GradientAscent:
    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: PolicyParams, grad: PolicyParams) -> PolicyParams:
        return PolicyParams(params.weights + self.lr * grad.weights, params.biases + self.lr * grad.biases)

    def state_dict(self) -> dict:
        return {"name": self.name}

    def load_state_dict(self, state: dict) -> None:
        if state.get("name") != self.name:
            raise ValueError(f"optimizer state is for {state.get('name')!r}, not {self.name!r}")


class AdamW:
    """Adaptive-moment ascent with decoupled weight decay."""

    name = "adamw"

    def __init__(self, lr: float, weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, params: PolicyParams, grad: PolicyParams) -> PolicyParams:
        g = grad.flat()
        if self.m is None:
            self.m, self.v = np.zeros_like(g), np.zeros_like(g)
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        theta = params.flat() * (1 - self.lr * self.weight_decay)
        theta = theta + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return PolicyParams.from_flat(theta, params.M, params.d)

    def state_dict(self) -> dict:
        return {
            "name": self.name,
            "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("name") != self.name:
            raise ValueError(f"optimizer state is for {state.get('name')!r}, not {self.name!r}")
        self.t = int(state["t"])
        self.m = None if state["m"] is None else np.array(state["m"], dtype=float)
        self.v = None if state["v"] is None else np.array(state["v"], dtype=float)


def make_optimizer(config: RunConfig):
    if config.optimizer == "adamw":
        return AdamW(config.learning_rate, config.weight_decay)
    return GradientAscent(config.learning_rate)


# -- objective ----------------------------------------------------------------


def objective_and_gradient(
    params: PolicyParams,
    rollouts: Sequence[Rollout],
    epsilon: float,
    beta: float,
    with_gradient: bool = True,
) -> tuple[float, PolicyParams | None, float, float]:
    """Batch-mean objective, its gradient, the clip fraction, and the mean KL estimate."""
    total = 0.0
    grad_w = np.zeros_like(params.weights)
    grad_b = np.zeros_like(params.biases)
    clipped = kl_sum = 0.0
    n_cand = 0
    for ro in rollouts:
        g = ro.group
        group_obj = 0.0
        for j, cand in enumerate(g.candidates):
            lp = log_prob(params, ro.query, cand.selection)
            ratio = math.exp(lp - g.old_log_probs[j])
            adv = g.advantages[j]
            kl = kl_estimate(lp, ro.ref_log_probs[j])
            group_obj += surrogate_term(ratio, adv, epsilon) - beta * kl
            is_clipped = _is_clipped(ratio, adv, epsilon)
            clipped += is_clipped
            kl_sum += kl
            n_cand += 1
            if with_gradient:
                # d(surrogate)/d(lp) = ratio * A on the unclipped branch; d(KL)/d(lp) = 1 - rho
                coeff = (0.0 if is_clipped else ratio * adv) - beta * (1.0 - math.exp(ro.ref_log_probs[j] - lp))
                if coeff:
                    grad = log_prob_gradient(params, ro.query, cand.selection)
                    grad_w += (coeff / g.G) * grad.weights
                    grad_b += (coeff / g.G) * grad.biases
        total += group_obj / g.G
    n = max(len(rollouts), 1)
    grad = PolicyParams(grad_w / n, grad_b / n) if with_gradient else None
    return total / n, grad, clipped / max(n_cand, 1), kl_sum / max(n_cand, 1)


# -- rollout ------------------------------------------------------------------


def collect_group(
    query: Query,
    old: PolicyParams,
    ref: PolicyParams,
    env: Environment,
    config: RunConfig,
    iteration: int,
    metric: Metric,
) -> tuple[Rollout | None, int, list[ToolSelection]]:
    """Sample and score the candidate group for one query.

    Returns the rollout (None when fewer than two episodes survived), the
    number of failed episodes, and every sampled selection.
    """
    key = query_key(query.id)
    cache = DirectCache()
    sampled: list[tuple[ToolSelection, float]] = [
        sample_selection(old, query, stream(config.seed, _SAMPLE, iteration, key, j))
        for j in range(config.group_size)
    ]
    records, old_lps, failures = [], [], 0
    for j, (sel, lp) in enumerate(sampled):
        try:
            direct = cache.get(env, query, stream(config.seed, _DIRECT, iteration, key))
            rec = run_episode(
                query,
                sel,
                env,
                stream(config.seed, _AUGMENTED, iteration, key, j),
                direct=direct,
                metric=metric,
                reward_values=config.reward_values,
            )
        except (EpisodeFailure, EnvironmentFailure) as exc:
            failures += 1
            log.warning("iteration %d: dropping candidate %d of %s: %s", iteration, j, query.id, exc)
            continue
        records.append(rec)
        old_lps.append(lp)
    selections = [s for s, _ in sampled]
    if len(records) < 2:
        if records or failures:
            log.warning("iteration %d: group for %s shrank below 2 and was dropped", iteration, query.id)
        return None, failures, selections
    group = GroupSample.build(query.id, records, old_lps, config.degenerate_std_threshold)
    ref_lps = np.array([log_prob(ref, query, r.selection) for r in records])
    return Rollout(query, group, ref_lps), failures, selections


# -- checkpoint directory -----------------------------------------------------

POLICY_FILE = "policy.ckpt"
REFERENCE_FILE = "reference.ckpt"
OPTIMIZER_FILE = "optimizer.json"
STATS_FILE = "stats.jsonl"
STATE_FILE = "state.json"
SNAPSHOT_DIR = "snapshots"


def _write_json(path: Path, data: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, sort_keys=True) + "\n")
    tmp.replace(path)


def snapshot_path(directory: str | Path, iteration: int) -> Path:
    return Path(directory) / SNAPSHOT_DIR / f"iter_{iteration:05d}.ckpt"


def read_stats(path: str | Path) -> list[IterationStats]:
    path = Path(path)
    if not path.exists():
        return []
    return [IterationStats.from_json(ln) for ln in path.read_text().splitlines() if ln.strip()]


@dataclass
class TrainResult:
    params: PolicyParams
    stats: list[IterationStats] = field(default_factory=list)


def train(
    config: RunConfig,
    dataset: Dataset | Sequence[Query],
    library: ToolLibrary,
    environment: Environment,
    policy: PolicyParams | None = None,
    *,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
    snapshot_every: int | None = None,
    metric: Metric = relaxed_match,
    callback: Callable[[IterationStats, PolicyParams], None] | None = None,
) -> TrainResult:
    """Run ``config.iterations`` GRPO iterations and return the final policy with per-iteration stats.

    With ``checkpoint_dir`` the policy, reference, optimizer state and stats
    log are written after every iteration; ``resume=True`` continues from
    whatever the directory holds. ``snapshot_every`` additionally keeps a
    copy of the policy every that many iterations (iteration 0 included).
    """
    queries = list(dataset)
    if not queries:
        raise ValueError("training needs a non-empty dataset")
    M, d = library.M, queries[0].features.shape[0]
    if environment.num_tools != M:
        raise ValueError(f"environment serves {environment.num_tools} tools, library has {M}")
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    optimizer = make_optimizer(config)
    params = policy.copy() if policy is not None else PolicyParams.zeros(M, d)
    if (params.M, params.d) != (M, d):
        raise ValueError(f"policy shape ({params.M}, {params.d}) does not match library/dataset ({M}, {d})")
    reference = reference_policy_mode(config, params)
    stats: list[IterationStats] = []
    start = 0

    if ckpt is not None and resume and (ckpt / STATE_FILE).exists():
        state = json.loads((ckpt / STATE_FILE).read_text())
        start = int(state["next_iteration"])
        params = load_checkpoint(ckpt / POLICY_FILE, M, d)
        reference = ReferencePolicy(load_checkpoint(ckpt / REFERENCE_FILE, M, d), config.reference_refresh)
        optimizer.load_state_dict(json.loads((ckpt / OPTIMIZER_FILE).read_text()))
        stats = read_stats(ckpt / STATS_FILE)[:start]
        (ckpt / STATS_FILE).write_text("".join(s.to_json() + "\n" for s in stats))
        log.info("resuming from %s at iteration %d", ckpt, start)
    elif ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        (ckpt / STATS_FILE).write_text("")
        _save_state(ckpt, 0, params, reference, optimizer, config)
        if snapshot_every:
            snapshot_path(ckpt, 0).parent.mkdir(exist_ok=True)
            save_checkpoint(snapshot_path(ckpt, 0), params)

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for it in range(start, config.iterations):
            ref = reference.update(it, params).params
            old = PolicySnapshot.take(params, "old").params
            batch = [queries[i] for i in batch_indices(len(queries), config.batch_size, it, config.seed)]

            def work(q: Query):
                return collect_group(q, old, ref, environment, config, it, metric)

            results = list(pool.map(work, batch)) if pool else [work(q) for q in batch]
            rollouts = [r for r, _, _ in results if r is not None]
            failed = sum(f for _, f, _ in results)
            usage = np.zeros(M, dtype=int)
            for _, _, sels in results:
                for s in sels:
                    usage[list(s.indices)] += 1
            if not rollouts:
                raise TrainingAborted(f"iteration {it}: no usable groups ({failed} failed episodes)")

            before, grad, clip_frac, mean_kl = objective_and_gradient(
                params, rollouts, config.clip_epsilon, config.kl_beta
            )
            params = optimizer.step(params, grad)
            after, _, _, _ = objective_and_gradient(
                params, rollouts, config.clip_epsilon, config.kl_beta, with_gradient=False
            )
            rewards = np.concatenate([r.group.rewards for r in rollouts])
            advs = np.concatenate([r.group.advantages for r in rollouts])
            st = IterationStats(
                iteration=it,
                mean_reward=float(rewards.mean()),
                mean_abs_advantage=float(np.abs(advs).mean()),
                clip_fraction=float(clip_frac),
                mean_kl=float(mean_kl),
                tool_usage=tuple(int(u) for u in usage),
                groups=len(rollouts),
                failed_episodes=int(failed),
                objective_before=float(before),
                objective_after=float(after),
            )
            stats.append(st)
            if ckpt is not None:
                with open(ckpt / STATS_FILE, "a") as fh:
                    fh.write(st.to_json() + "\n")
                if snapshot_every and (it + 1) % snapshot_every == 0:
                    snapshot_path(ckpt, it + 1).parent.mkdir(exist_ok=True)
                    save_checkpoint(snapshot_path(ckpt, it + 1), params)
                _save_state(ckpt, it + 1, params, reference, optimizer, config)
            if callback is not None:
                callback(st, params)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, stats)


def _save_state(ckpt: Path, next_iteration: int, params, reference: ReferencePolicy, optimizer, config) -> None:
    save_checkpoint(ckpt / POLICY_FILE, params)
    save_checkpoint(ckpt / REFERENCE_FILE, reference.snapshot.params)
    _write_json(ckpt / OPTIMIZER_FILE, optimizer.state_dict())
    # written last: marks the iteration as complete
    _write_json(ckpt / STATE_FILE, {"next_iteration": next_iteration, "run_config": config.to_dict()})

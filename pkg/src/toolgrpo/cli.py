"""Command-line driver: generate, train, eval, analyze, validate.

Exit codes: 0 success, 1 config error, 2 environment error, 3 dimension/validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config
from .core import Dataset, DatasetError, ToolLibrary, check_compatible, read_dataset, validate_dataset, write_dataset
from .environment import (
    EnvironmentFailure,
    RemoteConfig,
    RemoteEnvironment,
    SimProfile,
    Simulator,
    generate_synthetic_dataset,
    read_profiles,
    write_profiles,
)
from .environment.generator import write_closed_form
from .grpo import POLICY_FILE, SNAPSHOT_DIR, STATS_FILE, TrainingAborted, read_stats, train
from .matching import get_metric
from .metrics import (
    baseline_all_tools,
    baseline_no_tool,
    baseline_random_k,
    correlation_series,
    evaluate_policy,
    expected_selection_distribution,
    greedy_selection_distribution,
    pseudo_upper_bound,
    single_tool_accuracies,
    write_table,
)
from .policy import CheckpointError, PolicyParams, load_checkpoint

log = logging.getLogger("toolgrpo")

EXIT_OK, EXIT_CONFIG, EXIT_ENV, EXIT_VALIDATION = 0, 1, 2, 3


class MissingInput(ConfigError):
    pass


@dataclass
class Inputs:
    library: ToolLibrary
    train: Dataset
    eval: Dataset
    profiles: dict[str, SimProfile]


def load_inputs(cfg: ExperimentConfig) -> Inputs:
    if cfg.generator is not None:
        data = generate_synthetic_dataset(cfg.generator)
        return Inputs(data.library, data.train, data.eval, data.profiles)
    paths = cfg.dataset
    library = ToolLibrary.from_dict(json.loads(Path(paths.library).read_text()))
    train_ds = read_dataset(paths.train)
    eval_ds = read_dataset(paths.eval) if paths.eval else train_ds
    check_compatible(train_ds.header, eval_ds.header)
    if train_ds.header.tool_count != library.M:
        raise DatasetError(f"dataset declares {train_ds.header.tool_count} tools, library has {library.M}")
    profiles = read_profiles(paths.profiles) if paths.profiles else {}
    return Inputs(library, train_ds, eval_ds, profiles)


def build_environment(cfg: ExperimentConfig, inputs: Inputs):
    if cfg.environment_mode == "remote":
        remote = RemoteConfig.from_dict(cfg.remote, inputs.library.M).with_env_overrides()
        return RemoteEnvironment(remote)
    return Simulator(inputs.profiles, inputs.library).with_mode(cfg.deterministic)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- commands -----------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.generator is None:
        raise ConfigError("generate needs a 'generator' section")
    data = generate_synthetic_dataset(cfg.generator)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.jsonl", data.train)
    write_dataset(out / "eval.jsonl", data.eval)
    write_profiles(out / "profiles.jsonl", data.profiles)
    _dump_json(out / "library.json", data.library.to_dict())
    write_closed_form(out / "closed_form.json", out / "closed_form.csv", data.closed_form)
    (out / "generator.yaml").write_text(yaml.safe_dump(cfg.generator.to_dict(), sort_keys=True))
    doc = cfg.to_dict()
    doc["dataset"] = {
        "train": "train.jsonl",
        "eval": "eval.jsonl",
        "profiles": "profiles.jsonl",
        "library": "library.json",
    }
    doc.pop("generator", None)
    doc["output_dir"] = "run"
    (out / "experiment.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))
    summary = {
        "tools": data.library.M,
        "feature_dim": cfg.generator.feature_dim,
        "train": len(data.train),
        "eval": len(data.eval),
        "closed_form": {k: v.to_dict() for k, v in data.closed_form.items()},
    }
    det = data.closed_form.get("eval", data.closed_form.get("train"))
    if det is not None:
        d = det.deterministic
        print(f"wrote M={data.library.M} d={cfg.generator.feature_dim} train={len(data.train)} eval={len(data.eval)} to {out}")
        print(f"closed form (deterministic): no-tool={d['no_tool']:.4f} best-single={max(d['single_tool']):.4f} "
              f"all={d['all_tools']:.4f} oracle={d['oracle']:.4f}")
    return summary


def _standalone(cfg: ExperimentConfig, inputs: Inputs, env, dataset: Dataset) -> np.ndarray:
    acc, _, _ = single_tool_accuracies(
        dataset, inputs.library, env, metric=get_metric(cfg.metric), seed=cfg.run.seed, workers=cfg.run.workers
    )
    return acc


def _final_snapshots(run_dir: Path, M: int, d: int, iterations: int) -> dict[int, PolicyParams]:
    snaps: dict[int, PolicyParams] = {}
    for path in sorted((run_dir / "checkpoint" / SNAPSHOT_DIR).glob("iter_*.ckpt")):
        it = int(path.stem.split("_")[1])
        if it <= iterations:
            snaps[it] = load_checkpoint(path, M, d)
    snaps[iterations] = load_checkpoint(run_dir / "checkpoint" / POLICY_FILE, M, d)
    return snaps


def _write_series(out: Path, series: list[dict]) -> None:
    _dump_json(out / "correlation.json", series)
    _write_csv(out / "correlation.csv", ["iteration", "correlation", "degenerate"],
               [[s["iteration"], repr(s["correlation"]), int(s["degenerate"])] for s in series])


def cmd_train(cfg: ExperimentConfig, out: Path, resume: bool = False) -> dict:
    inputs = load_inputs(cfg)
    env = build_environment(cfg, inputs)
    out.mkdir(parents=True, exist_ok=True)
    materialized = replace(cfg, output_dir=str(out))
    (out / "config.yaml").write_text(materialized.dump())
    ckpt = out / "checkpoint"
    result = train(
        cfg.run,
        inputs.train,
        inputs.library,
        env,
        checkpoint_dir=ckpt,
        resume=resume,
        snapshot_every=cfg.analysis_every,
        metric=get_metric(cfg.metric),
    )
    stats = read_stats(ckpt / STATS_FILE)
    _write_csv(
        out / "stats.csv",
        ["iteration", "mean_reward", "mean_abs_advantage", "clip_fraction", "mean_kl", "groups", "failed_episodes"]
        + [f"usage_T{i}" for i in range(inputs.library.M)],
        [[s.iteration, repr(s.mean_reward), repr(s.mean_abs_advantage), repr(s.clip_fraction), repr(s.mean_kl),
          s.groups, s.failed_episodes, *s.tool_usage] for s in stats],
    )
    standalone = _standalone(cfg, inputs, env, inputs.train)
    _dump_json(out / "standalone.json", {"split": "train", "accuracy": [float(a) for a in standalone]})
    M, d = inputs.library.M, inputs.train.header.feature_dim
    series = correlation_series(_final_snapshots(out, M, d, cfg.run.iterations), inputs.train, standalone)
    _write_series(out, series)
    print(f"trained {len(result.stats)} iteration(s) -> {ckpt}")
    if series:
        print("correlation: " + ", ".join(f"{s['iteration']}:{s['correlation']:.3f}" for s in series))
    return {"stats": stats, "series": series, "params": result.params}


def _resolve_checkpoint(path: Path) -> Path:
    if path.is_dir():
        for candidate in (path / "checkpoint" / POLICY_FILE, path / POLICY_FILE):
            if candidate.exists():
                return candidate
        raise MissingInput(f"no {POLICY_FILE} under {path}")
    if not path.exists():
        raise MissingInput(f"checkpoint {path} does not exist")
    return path


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path, out: Path, with_baselines: bool | None = None,
             random_k: int | None = None) -> dict:
    inputs = load_inputs(cfg)
    env = build_environment(cfg, inputs)
    params = load_checkpoint(_resolve_checkpoint(checkpoint), inputs.library.M, inputs.eval.header.feature_dim)
    with_baselines = cfg.eval.with_baselines if with_baselines is None else with_baselines
    k = cfg.eval.random_k if random_k is None else random_k
    kw = dict(metric=get_metric(cfg.metric), seed=cfg.run.seed, workers=cfg.run.workers)
    ours = evaluate_policy(params, inputs.eval, inputs.library, env, sample=cfg.eval.sample, **kw)
    rows: list[tuple[str, float]] = []
    reports = {"ours": ours.to_dict()}
    if with_baselines:
        no_tool = baseline_no_tool(inputs.eval, inputs.library, env, **kw)
        acc, matrix, singles = single_tool_accuracies(inputs.eval, inputs.library, env, **kw)
        all_tools = baseline_all_tools(inputs.eval, inputs.library, env, **kw)
        rand = baseline_random_k(inputs.eval, inputs.library, env, k=k, rng_seed=cfg.run.seed, **kw)
        upper = pseudo_upper_bound(matrix)
        rows.append(("no-tool", no_tool.accuracy))
        rows += [(f"T{i}", a) for i, a in enumerate(acc)]
        rows += [("all", all_tools.accuracy), (f"random-{k}", rand.accuracy), ("ours", ours.accuracy),
                 ("upper", upper)]
        reports.update({"no-tool": no_tool.to_dict(), "all": all_tools.to_dict(), f"random-{k}": rand.to_dict()})
        reports.update({r.label: r.to_dict() for r in singles})
    else:
        rows.append(("ours", ours.accuracy))
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "table.csv", out / "table.json", rows, {"reports": reports})
    _write_csv(out / "verdicts.csv", ["query_id", "correct"], [[qid, int(ok)] for qid, ok in ours.verdicts])
    width = max(len(name) for name, _ in rows)
    for name, accv in rows:
        print(f"{name:<{width}}  {accv:.4f}")
    return {"rows": rows, "reports": reports}


def cmd_analyze(run_dir: Path, out: Path, eval_dir: Path | None = None, iteration: int | None = None) -> dict:
    """Correlation series plus the selection distribution of one snapshot (default: final policy)."""
    stats_path = run_dir / "checkpoint" / STATS_FILE
    cfg_path = run_dir / "config.yaml"
    if not cfg_path.exists() or not stats_path.exists():
        raise MissingInput(f"{run_dir} is not a training run directory (missing config.yaml or stats log)")
    stats = read_stats(stats_path)
    if not stats:
        raise MissingInput(f"{stats_path} is empty")
    cfg = config_from_dict(yaml.safe_load(cfg_path.read_text()), run_dir)
    inputs = load_inputs(cfg)
    M, d = inputs.library.M, inputs.train.header.feature_dim
    if eval_dir is not None:
        table_path = eval_dir / "table.json"
        if not table_path.exists():
            raise MissingInput(f"{table_path} not found")
        rows = {r["row"]: r["accuracy"] for r in json.loads(table_path.read_text())["rows"]}
        missing = [f"T{i}" for i in range(M) if f"T{i}" not in rows]
        if missing:
            raise MissingInput(f"eval table lacks single-tool rows {missing}; run eval --with-baselines")
        standalone = [rows[f"T{i}"] for i in range(M)]
        usage_set = inputs.eval
    else:
        sa_path = run_dir / "standalone.json"
        if not sa_path.exists():
            raise MissingInput(f"{sa_path} not found")
        standalone = json.loads(sa_path.read_text())["accuracy"]
        usage_set = inputs.train
    snaps = _final_snapshots(run_dir, M, d, stats[-1].iteration + 1)
    series = correlation_series(snaps, usage_set, standalone)
    pick = max(snaps) if iteration is None else iteration
    if pick not in snaps:
        raise MissingInput(f"no snapshot for iteration {pick}; available: {sorted(snaps)}")
    dist = {
        "iteration": pick,
        "sampling": expected_selection_distribution(snaps[pick], inputs.eval),
        "greedy": greedy_selection_distribution(snaps[pick], inputs.eval),
    }
    out.mkdir(parents=True, exist_ok=True)
    _write_series(out, series)
    _dump_json(out / "distribution.json", dist)
    samp, greedy = dist["sampling"], dist["greedy"]
    _write_csv(out / "distribution.csv", ["tool", "sampling", "greedy"],
               [[f"T{i}", repr(a), repr(b)] for i, (a, b) in enumerate(zip(samp["usage_frequency"], greedy["usage_frequency"]))]
               + [["none", repr(samp["no_tool_frequency"]), repr(greedy["no_tool_frequency"])]])
    _write_csv(out / "usage_by_iteration.csv", ["iteration"] + [f"T{i}" for i in range(M)],
               [[s.iteration, *s.tool_usage] for s in stats])
    print(f"mean tools per query: sampling {samp['mean_tools']:.3f}, greedy {greedy['mean_tools']:.3f}")
    print("correlation: " + ", ".join(f"{s['iteration']}:{s['correlation']:.3f}" for s in series))
    return {"series": series, "distribution": dist}


def cmd_validate(paths: Sequence[Path]) -> int:
    bad = 0
    headers = []
    for path in paths:
        ds = read_dataset(path, strict=False)
        headers.append(ds.header)
        report = validate_dataset(ds.queries, ds.header.feature_dim)
        for v in report:
            print(f"{path}: {v.record}: {v.kind}: {v.message}")
        empty = sum(1 for _ in ds.queries) == 0
        print(f"{path}: {len(ds)} records, {len(report)} violation(s)" + (" (empty)" if empty else ""))
        bad += len(report)
    check_compatible(*headers)
    return EXIT_VALIDATION if bad else EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="toolgrpo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--workers", type=int)

    g = sub.add_parser("generate", help="write a synthetic dataset, profiles and closed-form table")
    common(g, config_required=False)
    g.add_argument("--preset", choices=["chart", "geometry"], help="use a built-in generator preset")

    t = sub.add_parser("train", help="run GRPO training")
    common(t, config_required=False)
    t.add_argument("--resume", type=Path, help="continue the run stored in this directory")
    t.add_argument("--iterations", type=int)

    e = sub.add_parser("eval", help="evaluate a checkpoint, optionally with baselines")
    common(e)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--with-baselines", action="store_true", default=None)
    e.add_argument("--random-k", type=int)

    a = sub.add_parser("analyze", help="usage/accuracy correlation and selection distribution")
    a.add_argument("--run", type=Path, required=True, help="training run directory")
    a.add_argument("--eval-dir", type=Path)
    a.add_argument("--out", type=Path)
    a.add_argument("--iteration", type=int, help="snapshot for the selection distribution (default: final)")

    v = sub.add_parser("validate", help="check dataset files")
    v.add_argument("datasets", type=Path, nargs="+")
    return p


def _apply_common(cfg: ExperimentConfig, args) -> ExperimentConfig:
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers, iterations=getattr(args, "iterations", None))
    if args.seed is not None and cfg.generator is not None:
        cfg = replace(cfg, generator=replace(cfg.generator, seed=args.seed))
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.datasets)
        if args.command == "analyze":
            cmd_analyze(args.run, args.out or args.run / "analysis", args.eval_dir, args.iteration)
            return EXIT_OK
        if args.command == "generate":
            if args.config is not None:
                cfg = load_config(args.config)
            elif args.preset:
                cfg = config_from_dict({"generator": {"preset": args.preset}})
            else:
                raise ConfigError("generate needs --config or --preset")
            cfg = _apply_common(cfg, args)
            cmd_generate(cfg, args.out or Path(cfg.output_dir))
            return EXIT_OK
        if args.command == "train":
            if args.resume is not None:
                cfg = load_config(args.config) if args.config else load_config(args.resume / "config.yaml")
                cfg = _apply_common(cfg, args)
                cmd_train(cfg, args.resume, resume=True)
                return EXIT_OK
            if args.config is None:
                raise ConfigError("train needs --config (or --resume DIR)")
            cfg = _apply_common(load_config(args.config), args)
            cmd_train(cfg, args.out or Path(cfg.output_dir))
            return EXIT_OK
        if args.command == "eval":
            cfg = _apply_common(load_config(args.config), args)
            cmd_eval(cfg, args.checkpoint, args.out or Path(cfg.output_dir) / "eval", args.with_baselines, args.random_k)
            return EXIT_OK
    except (ConfigError, yaml.YAMLError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EnvironmentFailure, TrainingAborted, OSError) as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (DatasetError, CheckpointError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

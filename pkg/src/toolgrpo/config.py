"""Experiment configuration: a nested YAML document with every default materialized."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .core import RunConfig
from .environment.generator import GeneratorConfig, chart_library_config, geometry_library_config

ENV_MODES = ("simulator-deterministic", "simulator-stochastic", "remote")
PRESETS = {"chart": chart_library_config, "geometry": geometry_library_config}


class ConfigError(ValueError):
    pass


@dataclass
class DatasetPaths:
    train: str
    eval: str | None = None
    profiles: str | None = None
    library: str | None = None


@dataclass
class EvalOptions:
    with_baselines: bool = False
    random_k: int = 2
    sample: bool = False


@dataclass
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    dataset: DatasetPaths | None = None
    generator: GeneratorConfig | None = None
    environment_mode: str = "simulator-deterministic"
    remote: dict | None = None
    metric: str = "relaxed"
    output_dir: str = "runs/default"
    analysis_every: int = 10
    eval: EvalOptions = field(default_factory=EvalOptions)

    def __post_init__(self) -> None:
        if (self.dataset is None) == (self.generator is None):
            raise ConfigError("exactly one of 'dataset' and 'generator' must be given")
        if self.environment_mode not in ENV_MODES:
            raise ConfigError(f"environment mode must be one of {ENV_MODES}, got {self.environment_mode!r}")
        if self.environment_mode == "remote":
            if not self.remote or not self.remote.get("reason_url") or not self.remote.get("tool_urls"):
                raise ConfigError("remote mode needs remote.reason_url and remote.tool_urls")
        elif self.dataset is not None and not self.dataset.profiles:
            raise ConfigError("simulator modes need dataset.profiles")
        if self.dataset is not None and not self.dataset.library:
            raise ConfigError("dataset.library is required when loading a dataset from disk")
        if self.metric not in ("relaxed", "exact"):
            raise ConfigError(f"metric must be 'relaxed' or 'exact', got {self.metric!r}")
        if self.analysis_every < 1:
            raise ConfigError("analysis_every must be >= 1")

    @property
    def deterministic(self) -> bool:
        return self.environment_mode == "simulator-deterministic"

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"run": self.run.to_dict()}
        if self.dataset is not None:
            out["dataset"] = {k: v for k, v in vars(self.dataset).items()}
        if self.generator is not None:
            out["generator"] = self.generator.to_dict()
        out["environment"] = {"mode": self.environment_mode}
        if self.remote is not None:
            out["environment"]["remote"] = dict(self.remote)
        out["metric"] = self.metric
        out["output_dir"] = self.output_dir
        out["analysis_every"] = self.analysis_every
        out["eval"] = vars(self.eval).copy()
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def with_overrides(self, **run_overrides) -> "ExperimentConfig":
        run = replace(self.run, **{k: v for k, v in run_overrides.items() if v is not None})
        return replace(self, run=run)


def _generator_from(data: dict) -> GeneratorConfig:
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown generator preset {preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[preset](**data)
    return GeneratorConfig.from_dict(data)


def config_from_dict(data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    """Build a config, resolving relative dataset paths against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    known = {"run", "dataset", "generator", "environment", "metric", "output_dir", "analysis_every", "eval"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    base = Path(base_dir)
    try:
        run = RunConfig.from_dict(data.get("run") or {})
        dataset = None
        if data.get("dataset") is not None:
            paths = {k: (str((base / v).resolve()) if v else v) for k, v in data["dataset"].items()}
            dataset = DatasetPaths(**paths)
        generator = _generator_from(data["generator"]) if data.get("generator") is not None else None
        env = data.get("environment") or {}
        out = data.get("output_dir", "runs/default")
        return ExperimentConfig(
            run=run,
            dataset=dataset,
            generator=generator,
            environment_mode=env.get("mode", "simulator-deterministic"),
            remote=env.get("remote"),
            metric=data.get("metric", "relaxed"),
            output_dir=str((base / out).resolve()),
            analysis_every=int(data.get("analysis_every", 10)),
            eval=EvalOptions(**(data.get("eval") or {})),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data, path.parent)

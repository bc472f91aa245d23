"""Run configuration: one YAML file plus ``--set section.key=value`` overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from sectorgen.model.net import ModelDims
from sectorgen.model.trainer import TrainConfig
from sectorgen.synth import SyntheticSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    framework: str = "data/framework.tsv"
    companies: str = "data/companies.jsonl"
    annotations: str = "data/annotations.log"
    lexicon: str | None = None  # None -> bundled lexicon
    assertions: str = "assertions.txt"
    registry: str = "models/registry"
    pretrained: str = "models/pretrained.pt"
    state: str = "state/inspection.json"
    ledger: str = "state/inference_ledger.tsv"
    journal: str = "logs/journal.log"
    alerts: str = "logs/alerts.log"
    prediction_events: str = "logs/predictions.log"
    inference_load: str = "logs/inference_load.log"
    predictions: str = "outputs/predictions.tsv"
    reports: str = "reports"


@dataclass(frozen=True)
class OrchestratorConfig:
    significant: float = 0.75
    marginal: float = 0.1
    force_days: int = 90
    incremental_fraction: float = 0.125


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 300
    lr: float = 3e-3
    batch_size: int = 32
    max_vocab: int = 512


@dataclass(frozen=True)
class InferenceConfig:
    workers: int = 1
    max_gen_len: int = 8


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threshold: int = 20
    train_fraction: float = 0.9
    paths: Paths = field(default_factory=Paths)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        T=1500, t_prime=300, eps1=0.5, eps2=0.1, warmup1=100, warmup2=150, patience=5, eval_every=100))
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    base_dir: str = "."

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed, train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d["train"] = self.train.to_dict()
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {
    "paths": Paths,
    "orchestrator": OrchestratorConfig,
    "pretrain": PretrainConfig,
    "model": ModelDims,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "synthetic": SyntheticSpec,
}


def _coerce(text: str) -> Any:
    return yaml.safe_load(text)


def _build(cls, values: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def from_dict(data: dict | None, base_dir: str | os.PathLike = ".", overrides: list[str] | None = None) -> RunConfig:
    data = dict(data or {})
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        parts = key.strip().split(".")
        target = data
        for p in parts[:-1]:
            target = target.setdefault(p, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {item!r} descends into a scalar")
        target[parts[-1]] = _coerce(raw)

    top_known = {f.name for f in dataclasses.fields(RunConfig)} - {"base_dir"}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {"base_dir": str(base_dir)}
    defaults = RunConfig()
    for name in top_known:
        if name not in data:
            continue
        if name in _SECTIONS:
            section = data[name] or {}
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            base = dataclasses.asdict(getattr(defaults, name)) if name != "train" else defaults.train.to_dict()
            base.update(section)
            kwargs[name] = _build(_SECTIONS[name], base, name)
        else:
            kwargs[name] = data[name]
    cfg = _build(RunConfig, kwargs, "config")
    if "seed" in data and "seed" not in (data.get("train") or {}):
        cfg = cfg.with_seed(int(cfg.seed))
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    if cfg.threshold < 1:
        raise ConfigError("threshold must be >= 1")
    return cfg


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> RunConfig:
    if path is None:
        return from_dict({}, ".", overrides)
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return from_dict(data, path.parent, overrides)

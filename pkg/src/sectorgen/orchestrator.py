"""Daily rule-based inspection and the finetune workflow it drives."""

from __future__ import annotations

import copy
import json
import logging
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import torch

from sectorgen.attribution import attribute, build_training_set
from sectorgen.augment import SynonymLexicon, balance
from sectorgen.evaluation import QaAssertion, QaVerdict, SectorMetrics, confusion, metrics, qa_gate
from sectorgen.framework import SectorTree
from sectorgen.model.checkpoint import Checkpoint, ModelRegistry
from sectorgen.model.net import Backbone
from sectorgen.model.trainer import MAX_INPUT_LEN, Example, TrainConfig, predict_texts, train
from sectorgen.model.vocab import Vocabulary
from sectorgen.persistence import AppendLog, atomic_write_text
from sectorgen.store import BaselineSnapshot, CompanyStore
from sectorgen.text import tokenize

log = logging.getLogger(__name__)


class Scenario(str, Enum):
    FULL = "FullFinetune"
    INCREMENTAL = "IncrementalFinetune"
    SKIP = "SkipFinetune"

    @property
    def severity(self) -> int:
        return {Scenario.SKIP: 0, Scenario.INCREMENTAL: 1, Scenario.FULL: 2}[self]


@dataclass(frozen=True)
class Thresholds:
    significant: float = 0.75
    marginal: float = 0.1
    force_days: int = 90


@dataclass(frozen=True)
class ScenarioDecision:
    scenario: Scenario
    reasons: tuple[tuple[str, str], ...] = ()

    def to_json(self) -> dict:
        return {"scenario": self.scenario.value, "reasons": [list(r) for r in self.reasons]}


@dataclass(frozen=True)
class InspectionState:
    last_full_finetune_at: datetime | None = None
    baseline: BaselineSnapshot | None = None
    framework_fingerprint: str | None = None
    current_model_version: str | None = None

    def to_json(self) -> dict:
        return {
            "last_full_finetune_at": self.last_full_finetune_at.isoformat() if self.last_full_finetune_at else None,
            "baseline": self.baseline.to_json() if self.baseline else None,
            "framework_fingerprint": self.framework_fingerprint,
            "current_model_version": self.current_model_version,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InspectionState":
        last = d.get("last_full_finetune_at")
        base = d.get("baseline")
        return cls(datetime.fromisoformat(last) if last else None,
                   BaselineSnapshot.from_json(base) if base else None,
                   d.get("framework_fingerprint"), d.get("current_model_version"))

    @classmethod
    def load(cls, path) -> "InspectionState":
        path = Path(path)
        if not path.exists():
            return cls()
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def inspect(state: InspectionState, store: CompanyStore, tree: SectorTree, now: datetime,
            thresholds: Thresholds = Thresholds()) -> ScenarioDecision:
    """Pick the scenario for today from framework and per-sector annotation churn."""
    full: list[tuple[str, str]] = []
    marginal: list[tuple[str, str]] = []
    if state.current_model_version is None:
        full.append(("no_model", "no released model yet"))
    if state.baseline is None:
        full.append(("no_baseline", "no training baseline recorded"))
    if state.framework_fingerprint is not None and state.framework_fingerprint != tree.fingerprint:
        full.append(("framework_changed", f"{state.framework_fingerprint[:12]} -> {tree.fingerprint[:12]}"))

    if state.baseline is not None:
        current = store.sector_members()
        for sid in tree.depth_first_index():
            base = state.baseline.count(sid)
            if base == 0:
                if current.get(sid):
                    full.append(("new_sector", f"{sid}: {len(current[sid])} annotated, none at baseline"))
                continue
            ratio = store.change_ratio(sid, state.baseline)
            if ratio >= thresholds.significant:
                full.append(("significant_change", f"{sid}: ratio {ratio:.4f}"))
            elif ratio >= thresholds.marginal:
                marginal.append(("marginal_change", f"{sid}: ratio {ratio:.4f}"))

    if full:
        return ScenarioDecision(Scenario.FULL, tuple(full + marginal))
    if marginal:
        last = state.last_full_finetune_at
        if last is None or now - last >= timedelta(days=thresholds.force_days):
            since = "never" if last is None else f"{(now - last).days} days"
            return ScenarioDecision(Scenario.FULL, tuple(marginal) + (("forced_full", f"last full finetune: {since}"),))
        return ScenarioDecision(Scenario.INCREMENTAL, tuple(marginal))
    return ScenarioDecision(Scenario.SKIP)


# ---------------------------------------------------------------------------
# finetune workflow


class NoEligibleSectors(RuntimeError):
    pass


@dataclass(frozen=True)
class FinetuneSettings:
    train: TrainConfig
    threshold: int = 20
    train_fraction: float = 0.9
    incremental_fraction: float = 0.125
    assertions: Sequence[QaAssertion] = ()
    seed: int = 0

    def incremental_config(self) -> TrainConfig:
        steps = max(1, int(self.train.T * self.incremental_fraction))
        return replace(self.train, T=steps, t_prime=0, warmup1=0)


@dataclass
class FinetuneOutcome:
    status: str  # "released" | "blocked"
    scenario: Scenario
    model_version: str | None
    verdict: QaVerdict
    scores: SectorMetrics
    val_accuracy: float | None
    history: list[dict] = field(default_factory=list)
    state: InspectionState | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def released(self) -> bool:
        return self.status == "released"


def split_dataset(samples: list, fraction: float, seed: int) -> tuple[list, list]:
    """Shuffle and cut at `fraction` (at least one sample on each side when possible)."""
    shuffled = list(samples)
    random.Random(seed).shuffle(shuffled)
    n_train = int(round(len(shuffled) * fraction))
    n_train = min(max(n_train, 1), len(shuffled) - 1) if len(shuffled) > 1 else len(shuffled)
    return shuffled[:n_train], shuffled[n_train:]


def prepare_dataset(tree: SectorTree, store: CompanyStore, threshold: int, lexicon: SynonymLexicon,
                    fraction: float, seed: int) -> tuple[list[Example], list[Example], list[str]]:
    """Attribution -> training samples -> balancing -> 9:1 split.  Returns (train, validation, labels)."""
    result = attribute(tree, store, threshold)
    if not result.eligible:
        raise NoEligibleSectors(f"no sector reaches {threshold} annotated companies")
    per_sector = build_training_set(result, store, tree)
    per_sector = {sid: s for sid, s in per_sector.items() if s}
    balanced = balance(per_sector, lexicon, base_seed=seed)
    flat = [Example(s.input_text, s.target_text) for sid in per_sector for s in balanced[sid]]
    train_set, val_set = split_dataset(flat, fraction, seed)
    labels = [tree[sid].name for sid in per_sector]
    return train_set, val_set, labels


def extend_vocab(vocab: Vocabulary, labels: Sequence[str]) -> tuple[Vocabulary, bool]:
    missing = [t for name in labels for t in tokenize(name) if t not in vocab]
    if not missing:
        return vocab, False
    out = Vocabulary.from_list(vocab.to_list())
    for t in missing:
        out.add(t)
    return out, True


def run_finetune(decision: ScenarioDecision, tree: SectorTree, store: CompanyStore, registry: ModelRegistry,
                 settings: FinetuneSettings, state: InspectionState, now: datetime,
                 pretrained: Callable[[], tuple[Backbone, Vocabulary]], lexicon: SynonymLexicon | None = None,
                 alert_log: AppendLog | None = None) -> FinetuneOutcome:
    """Train per the decided scenario, gate on QA and release the checkpoint if it passes."""
    if decision.scenario is Scenario.SKIP:
        raise ValueError("run_finetune called for SkipFinetune")
    lexicon = lexicon if lexicon is not None else SynonymLexicon.bundled()
    train_set, val_set, labels = prepare_dataset(tree, store, settings.threshold, lexicon,
                                                 settings.train_fraction, settings.seed)
    scenario = decision.scenario
    notes: list[str] = []
    init = None
    if scenario is Scenario.INCREMENTAL:
        prev = registry.load(state.current_model_version)
        vocab, grew = extend_vocab(prev.vocab, labels)
        if grew or not prev.model.paradigm.generative and list(prev.labels) != labels:
            notes.append("label space changed since the last model; escalated to a full finetune")
            scenario = Scenario.FULL
        else:
            init, backbone, config = prev.model, prev.model.backbone, settings.incremental_config()
    if scenario is Scenario.FULL:
        backbone, base_vocab = pretrained()
        vocab, grew = extend_vocab(base_vocab, labels)
        if grew:
            backbone = _resized(backbone, len(vocab), settings.seed)
        config = settings.train

    result = train(train_set, val_set, config, backbone, vocab, labels=labels, init=init)
    val_inputs = [vocab.encode(e.input_text)[:MAX_INPUT_LEN] for e in val_set]
    preds = predict_texts(result.model, vocab, val_inputs, config.max_gen_len, labels)
    scores = metrics(confusion([e.target_text for e in val_set], preds, labels))

    ckpt = Checkpoint(result.model, vocab, labels, config.to_dict(), {
        "scenario": scenario.value,
        "trained_at": now.isoformat(),
        "best_step": result.best_step,
        "val_accuracy": result.best_accuracy,
        "framework": tree.fingerprint,
        "n_train": len(train_set),
        "n_validation": len(val_set),
    })
    version = ckpt.version
    verdict = qa_gate(scores, settings.assertions, alert_log, model_version=version, at=now)
    outcome = FinetuneOutcome("blocked", scenario, version, verdict, scores, result.best_accuracy,
                              result.history, state, notes)
    if not verdict.passed:
        log.warning("QA gate blocked model %s: %d violation(s)", version, len(verdict.violations))
        return outcome
    registry.release(ckpt)
    outcome.status = "released"
    outcome.state = InspectionState(
        last_full_finetune_at=now if scenario is Scenario.FULL else state.last_full_finetune_at,
        baseline=store.snapshot_baseline(tree, now),
        framework_fingerprint=tree.fingerprint,
        current_model_version=version,
    )
    return outcome


def _resized(backbone: Backbone, size: int, seed: int) -> Backbone:
    out = copy.deepcopy(backbone)
    out.resize_vocab(size, generator=torch.Generator().manual_seed(seed + 7))
    return out

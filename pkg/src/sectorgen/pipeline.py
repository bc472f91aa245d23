"""Workspace wiring: loads the files named in a RunConfig and runs the daily tick."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from functools import cached_property

from filelock import FileLock

from sectorgen.augment import SynonymLexicon
from sectorgen.config import RunConfig
from sectorgen.evaluation import SectorMetrics, confusion, load_assertions, metrics
from sectorgen.framework import SectorTree, load_framework
from sectorgen.inference import InferenceLedger, PredictionStore, infer_batch, publish, select_companies
from sectorgen.model.checkpoint import CheckpointError, ModelRegistry, load_backbone, save_backbone
from sectorgen.model.trainer import MAX_INPUT_LEN, predict_texts, pretrain
from sectorgen.model.vocab import Vocabulary
from sectorgen.orchestrator import (
    FinetuneOutcome,
    FinetuneSettings,
    InspectionState,
    Scenario,
    ScenarioDecision,
    Thresholds,
    inspect,
    prepare_dataset,
    run_finetune,
)
from sectorgen.persistence import AppendLog
from sectorgen.store import CompanyStore, render_template

log = logging.getLogger(__name__)


class Workspace:
    def __init__(self, config: RunConfig):
        self.config = config

    def tree(self) -> SectorTree:
        return load_framework(self.config.path("framework"))

    def store(self) -> CompanyStore:
        return CompanyStore.open(self.config.path("companies"), self.config.path("annotations"))

    @cached_property
    def registry(self) -> ModelRegistry:
        return ModelRegistry(self.config.path("registry"))

    def state(self) -> InspectionState:
        return InspectionState.load(self.config.path("state"))

    def log(self, name: str) -> AppendLog:
        return AppendLog(self.config.path(name))

    def lexicon(self) -> SynonymLexicon:
        path = self.config.path("lexicon")
        return SynonymLexicon.load(path) if path else SynonymLexicon.bundled()

    def ledger(self) -> InferenceLedger:
        return InferenceLedger(self.config.path("ledger"))

    def predictions(self) -> PredictionStore:
        return PredictionStore(self.config.path("predictions"))

    def thresholds(self) -> Thresholds:
        o = self.config.orchestrator
        return Thresholds(o.significant, o.marginal, o.force_days)

    def settings(self) -> FinetuneSettings:
        return FinetuneSettings(
            train=self.config.train,
            threshold=self.config.threshold,
            train_fraction=self.config.train_fraction,
            incremental_fraction=self.config.orchestrator.incremental_fraction,
            assertions=tuple(load_assertions(self.config.path("assertions"))),
            seed=self.config.seed,
        )

    def pretrained(self):
        backbone, vocab, _ = load_backbone(self.config.path("pretrained"))
        return backbone, vocab

    def lock(self) -> FileLock:
        path = self.config.path("state")
        path.parent.mkdir(parents=True, exist_ok=True)
        return FileLock(str(path) + ".lock")


def run_pretrain(ws: Workspace) -> dict:
    """Pretrain the backbone on every company's rendered text (no sector targets)."""
    cfg = ws.config
    store, tree = ws.store(), ws.tree()
    texts = [render_template(c).input_text for _, c in sorted(store.companies.items())]
    if not texts:
        raise ValueError("no companies to pretrain on; ingest companies first")
    vocab = Vocabulary.build(texts, cfg.pretrain.max_vocab, extra=[n.name for n in tree.nodes.values()])
    corpus = [vocab.encode(t) for t in texts]
    result = pretrain(corpus, vocab, cfg.pretrain.steps, seed=cfg.seed, dims=cfg.model,
                      batch_size=cfg.pretrain.batch_size, lr=cfg.pretrain.lr)
    meta = {"steps": cfg.pretrain.steps, "final_loss": result.losses[-1] if result.losses else None}
    version = save_backbone(cfg.path("pretrained"), result.backbone, vocab, meta)
    return {"version": version, "vocab_size": len(vocab), "losses": result.losses}


@dataclass
class InferenceOutcome:
    model_version: str
    population: int
    selected: int
    novel: int
    published: int
    failed: list[str] = field(default_factory=list)


def run_inference(ws: Workspace, now: datetime, store: CompanyStore | None = None,
                  tree: SectorTree | None = None) -> InferenceOutcome:
    store = store or ws.store()
    tree = tree or ws.tree()
    version = ws.registry.current()
    if version is None:
        raise CheckpointError("no released model to run inference with")
    ckpt = ws.registry.load(version)
    ledger = ws.ledger()
    chosen = select_companies(store, ledger, version)
    records = infer_batch(ckpt, [store.companies[c] for c in sorted(chosen)], tree, now,
                          workers=ws.config.inference.workers, max_len=ws.config.inference.max_gen_len)
    ack = publish(records, ws.predictions(), ws.log("prediction_events"))
    persisted = set(ack.persisted)
    ledger.record(r for r in records if r.company_id in persisted)
    ledger.save()
    ws.log("inference_load").append({"at": now.isoformat(), "model_version": version,
                                     "selected": len(chosen), "population": len(store)})
    return InferenceOutcome(version, len(store), len(chosen), sum(r.novel for r in records),
                            len(ack.persisted), ack.failed)


@dataclass
class TickResult:
    decision: ScenarioDecision
    finetune: FinetuneOutcome | None
    inference: InferenceOutcome | None
    outcome: str


def tick(ws: Workspace, now: datetime) -> TickResult:
    """Inspect, then either finetune (+ re-infer) or run incremental inference only."""
    with ws.lock():
        journal = ws.log("journal")
        if journal.exists():
            past = journal.replay()
            if past and datetime.fromisoformat(past[-1]["at"]) > now:
                raise ValueError(f"tick at {now.isoformat()} precedes the last journal entry {past[-1]['at']}")
        state, store, tree = ws.state(), ws.store(), ws.tree()
        gone = {a.sector_id for a in store.active().values()} - set(tree.nodes)
        if gone:
            orphaned = store.orphan_sectors(gone, now)
            log.warning("%d annotation(s) orphaned by removed sectors %s", len(orphaned), sorted(gone))
        decision = inspect(state, store, tree, now, ws.thresholds())
        finetune = None
        outcome = "skipped"
        if decision.scenario is not Scenario.SKIP:
            finetune = run_finetune(decision, tree, store, ws.registry, ws.settings(), state, now,
                                    ws.pretrained, ws.lexicon(), ws.log("alerts"))
            if finetune.released:
                finetune.state.save(ws.config.path("state"))
                outcome = "released"
            else:
                outcome = "qa_blocked"
        inference = None
        if ws.registry.current() is not None:
            inference = run_inference(ws, now, store, tree)
        journal.append({
            "at": now.isoformat(),
            "decision": decision.scenario.value,
            "reasons": [list(r) for r in decision.reasons],
            "outcome": outcome,
            "trained_scenario": finetune.scenario.value if finetune else None,
            "model_version": ws.registry.current(),
            "selected": inference.selected if inference else 0,
        })
        return TickResult(decision, finetune, inference, outcome)


def evaluate_current(ws: Workspace) -> tuple[SectorMetrics, str]:
    """Score the released model on the current validation split; returns (metrics, confusion text)."""
    ckpt = ws.registry.load()
    cfg = ws.config
    _, val_set, labels = prepare_dataset(ws.tree(), ws.store(), cfg.threshold, ws.lexicon(),
                                         cfg.train_fraction, cfg.seed)
    preds = predict_texts(ckpt.model, ckpt.vocab, [ckpt.vocab.encode(e.input_text)[:MAX_INPUT_LEN] for e in val_set],
                          cfg.inference.max_gen_len, ckpt.labels)
    matrix = confusion([e.target_text for e in val_set], preds, labels)
    return metrics(matrix), matrix.format()

"""Change-driven company selection, batch inference and prediction publishing.

Prediction store: one latest record per company, tab separated::

    company_id  generated_text  matched_sector_id  model_version  feature_version  predicted_at

``matched_sector_id`` is empty for novel (out-of-framework) generations.  The
event log carries the same fields as JSON behind a sequence number.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

from sectorgen.framework import SectorTree
from sectorgen.model.checkpoint import Checkpoint
from sectorgen.model.trainer import MAX_INPUT_LEN, predict_texts
from sectorgen.persistence import AppendLog, SnapshotStore, escape_field, unescape_field
from sectorgen.store import Company, CompanyStore, render_template

log = logging.getLogger(__name__)

FIELDS = ("company_id", "generated_text", "matched_sector_id", "model_version", "feature_version", "predicted_at")


@dataclass(frozen=True)
class PredictionRecord:
    company_id: str
    generated_text: str
    matched_sector_id: str | None
    model_version: str
    feature_version: str
    predicted_at: datetime

    @property
    def novel(self) -> bool:
        return self.matched_sector_id is None

    def to_json(self) -> dict:
        return {
            "company_id": self.company_id,
            "generated_text": self.generated_text,
            "matched_sector_id": self.matched_sector_id,
            "model_version": self.model_version,
            "feature_version": self.feature_version,
            "predicted_at": self.predicted_at.isoformat(),
        }

    def to_line(self) -> str:
        values = [self.company_id, self.generated_text, self.matched_sector_id or "", self.model_version,
                  self.feature_version, self.predicted_at.isoformat()]
        return "\t".join(escape_field(v) for v in values)

    @classmethod
    def from_line(cls, line: str) -> "PredictionRecord":
        parts = [unescape_field(p) for p in line.split("\t")]
        if len(parts) != len(FIELDS):
            raise ValueError(f"expected {len(FIELDS)} fields, got {len(parts)}")
        cid, text, sid, mv, fv, at = parts
        return cls(cid, text, sid or None, mv, fv, datetime.fromisoformat(at))


class InferenceLedger:
    """Per company: the feature version and model version it was last inferred with."""

    def __init__(self, path=None):
        self.snapshot = SnapshotStore(path, "inference-ledger") if path else None
        self.entries: dict[str, tuple[str, str]] = {}
        if self.snapshot is not None:
            for line in self.snapshot.read():
                cid, fv, mv = line.split("\t")
                self.entries[cid] = (fv, mv)

    def get(self, company_id: str) -> tuple[str, str] | None:
        return self.entries.get(company_id)

    def record(self, records: Iterable[PredictionRecord]) -> None:
        for r in records:
            self.entries[r.company_id] = (r.feature_version, r.model_version)

    def save(self) -> None:
        if self.snapshot is not None:
            self.snapshot.write(f"{cid}\t{fv}\t{mv}" for cid, (fv, mv) in sorted(self.entries.items()))

    def __len__(self) -> int:
        return len(self.entries)


def select_companies(store: CompanyStore, ledger: InferenceLedger, model_version: str) -> set[str]:
    """Companies never inferred, with changed features, or last inferred by another model."""
    selected = set()
    for cid, company in store.companies.items():
        entry = ledger.get(cid)
        if entry is None or entry[0] != company.feature_version or entry[1] != model_version:
            selected.add(cid)
    return selected


def _infer_chunk(ckpt: Checkpoint, companies: Sequence[Company], tree: SectorTree, now: datetime,
                 version: str, max_len: int) -> list[PredictionRecord]:
    out = []
    for company in companies:
        # one company per forward pass: results cannot depend on batch composition
        ids = [ckpt.vocab.encode(render_template(company).input_text)[:MAX_INPUT_LEN]]
        text = predict_texts(ckpt.model, ckpt.vocab, ids, max_len, ckpt.labels)[0]
        node = tree.by_name(text) if text else None
        out.append(PredictionRecord(company.id, text, node.id if node else None, version,
                                    company.feature_version, now))
    return out


def infer_batch(ckpt: Checkpoint, companies: Sequence[Company], tree: SectorTree, now: datetime,
                workers: int = 1, max_len: int = 8) -> list[PredictionRecord]:
    """Generate a sector for each company; exact (normalized) name match or novel."""
    if not companies:
        return []
    version = ckpt.version
    ordered = sorted(companies, key=lambda c: c.id)
    if workers <= 1:
        return _infer_chunk(ckpt, ordered, tree, now, version, max_len)
    size = -(-len(ordered) // workers)
    chunks = [ordered[i : i + size] for i in range(0, len(ordered), size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda ch: _infer_chunk(ckpt, ch, tree, now, version, max_len), chunks)
    return [r for part in parts for r in part]


class PredictionStore:
    """Latest-wins table of predictions, one line per company."""

    def __init__(self, path):
        self.snapshot = SnapshotStore(path, "predictions")

    def read(self) -> dict[str, PredictionRecord]:
        return {r.company_id: r for r in map(PredictionRecord.from_line, self.snapshot.read())}

    def upsert(self, records: Iterable[PredictionRecord]) -> None:
        table = self.read()
        for r in records:
            table[r.company_id] = r
        self.snapshot.write(table[cid].to_line() for cid in sorted(table))


@dataclass
class PublishAck:
    persisted: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def publish(records: Sequence[PredictionRecord], prediction_store: PredictionStore, event_log: AppendLog) -> PublishAck:
    """Upsert into the store and append every record to the event log."""
    ack = PublishAck()
    if not records:
        return ack
    ids = [r.company_id for r in records]
    failed: set[str] = set()
    try:
        prediction_store.upsert(records)
    except OSError as exc:
        failed.update(ids)
        ack.errors.append(f"prediction store: {exc}")
    try:
        event_log.extend(r.to_json() for r in records)
    except OSError as exc:
        failed.update(ids)
        ack.errors.append(f"event log: {exc}")
    ack.failed = sorted(failed)
    ack.persisted = [cid for cid in ids if cid not in failed]
    return ack


def load_reduction(history: Sequence[Mapping], window: int | None = None) -> float:
    """Mean over days of 1 - selected/N; `history` rows carry ``selected`` and ``population``."""
    rows = list(history)[-window:] if window else list(history)
    if not rows:
        raise ValueError("load_reduction needs at least one day of history")
    total = 0.0
    for row in rows:
        n = row["population"]
        total += 1.0 - (row["selected"] / n if n else 0.0)
    return total / len(rows)

"""Companies, their evolving sector annotations, and the sample template.

Companies are kept as a latest-state snapshot (JSON lines); annotations are
event-sourced from an append-only log whose records look like::

    {"at": "2024-01-01T02:00:00", "company_id": "c1", "sector_id": "s4", "action": "add"}

A re-annotation writes a ``remove`` for the old sector followed by an ``add``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping

from sectorgen.framework import SectorTree
from sectorgen.persistence import AppendLog, atomic_write_text


class StoreError(ValueError):
    code = "StoreError"


class UnknownCompany(StoreError):
    code = "UnknownCompany"


class UnknownSector(StoreError):
    code = "UnknownSector"


class NewSector(Exception):
    """The sector had no annotated companies when the baseline was taken."""

    def __init__(self, sector_id: str):
        super().__init__(sector_id)
        self.sector_id = sector_id


@dataclass(frozen=True)
class Company:
    id: str
    legal_name: str
    tags: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def feature_version(self) -> str:
        payload = json.dumps([self.legal_name, list(self.tags), self.description], ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        return {"id": self.id, "legal_name": self.legal_name, "tags": list(self.tags), "description": self.description}

    @classmethod
    def from_json(cls, d: Mapping) -> "Company":
        return cls(str(d["id"]), d.get("legal_name", ""), tuple(d.get("tags") or ()), d.get("description") or "")


@dataclass(frozen=True)
class Annotation:
    company_id: str
    sector_id: str
    annotated_at: datetime
    active: bool = True
    orphaned: bool = False


@dataclass(frozen=True)
class AnnotationEvent:
    seq: int
    at: datetime
    company_id: str
    sector_id: str
    action: str  # "add" | "remove"
    reason: str = ""


def join_tags(tags: Iterable[str]) -> str:
    tags = [t.strip() for t in tags if t.strip()]
    if len(tags) <= 1:
        return "".join(tags)
    return ", ".join(tags[:-1]) + " and " + tags[-1]


@dataclass(frozen=True)
class FilledSample:
    """A company rendered into the sample template, with its sector target (if any)."""

    company_id: str
    name: str
    tags: tuple[str, ...] = ()
    description: str = ""
    target_text: str = ""

    @property
    def input_text(self) -> str:
        parts = [self.name.strip()]
        if self.tags:
            parts.append(f"concerns {join_tags(self.tags)}")
        desc = self.description.strip().rstrip(".").strip()
        if desc:
            parts.append(f"is {desc}")
        return ", ".join(parts) + ". Sector:"

    def render(self) -> str:
        return f"{self.input_text} {self.target_text or '[s]'}."


def render_template(company: Company, sector_name: str = "") -> FilledSample:
    return FilledSample(company.id, company.legal_name, tuple(t for t in company.tags if t.strip()),
                        company.description, sector_name)


@dataclass(frozen=True)
class BaselineSnapshot:
    taken_at: datetime
    position: int  # annotation events up to this seq are part of the baseline
    members: Mapping[str, frozenset] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return {s: len(m) for s, m in self.members.items()}

    def count(self, sector_id: str) -> int:
        return len(self.members.get(sector_id, ()))

    def to_json(self) -> dict:
        return {
            "taken_at": self.taken_at.isoformat(),
            "position": self.position,
            "members": {s: sorted(m) for s, m in sorted(self.members.items())},
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "BaselineSnapshot":
        return cls(datetime.fromisoformat(d["taken_at"]), int(d["position"]),
                   {s: frozenset(m) for s, m in d["members"].items()})


class CompanyStore:
    """In-memory company/annotation state, optionally backed by files.

    Single writer; read-only views (``members``, ``snapshot_baseline``) are
    safe to take at any point.
    """

    def __init__(self, companies_path: str | os.PathLike | None = None,
                 annotations_log: str | os.PathLike | None = None):
        self.companies: dict[str, Company] = {}
        self.events: list[AnnotationEvent] = []
        self._active: dict[str, Annotation] = {}
        self._orphaned: dict[str, Annotation] = {}
        self.companies_path = Path(companies_path) if companies_path else None
        self.log = AppendLog(annotations_log) if annotations_log else None

    # -- loading / saving -----------------------------------------------------

    @classmethod
    def open(cls, companies_path, annotations_log) -> "CompanyStore":
        store = cls(companies_path, annotations_log)
        if store.companies_path.exists():
            for c in read_companies(store.companies_path):
                store.companies[c.id] = c
        if store.log.exists():
            for rec in store.log.replay():
                store._apply(_event_from_record(rec))
        return store

    def save_companies(self) -> None:
        if self.companies_path is None:
            raise StoreError("store has no companies file")
        write_companies(self.companies_path, self.companies.values())

    # -- companies -------------------------------------------------------------

    def upsert_company(self, company: Company) -> Company:
        if not company.id or not str(company.id).strip():
            raise StoreError("company id is empty")
        self.companies[company.id] = company
        return company

    def get(self, company_id: str) -> Company:
        try:
            return self.companies[company_id]
        except KeyError:
            raise UnknownCompany(company_id) from None

    def __len__(self) -> int:
        return len(self.companies)

    # -- annotations -----------------------------------------------------------

    def _record(self, at: datetime, company_id: str, sector_id: str, action: str, reason: str = "") -> AnnotationEvent:
        rec = {"at": at.isoformat(), "company_id": company_id, "sector_id": sector_id, "action": action}
        if reason:
            rec["reason"] = reason
        seq = self.log.append(rec) if self.log is not None else len(self.events) + 1
        event = AnnotationEvent(seq, at, company_id, sector_id, action, reason)
        self._apply(event)
        return event

    def _apply(self, ev: AnnotationEvent) -> None:
        self.events.append(ev)
        current = self._active.get(ev.company_id)
        if ev.action == "add":
            self._orphaned.pop(ev.company_id, None)
            self._active[ev.company_id] = Annotation(ev.company_id, ev.sector_id, ev.at)
        elif ev.action == "remove":
            if current is not None and current.sector_id == ev.sector_id:
                del self._active[ev.company_id]
                if ev.reason == "orphaned":
                    self._orphaned[ev.company_id] = Annotation(
                        ev.company_id, ev.sector_id, current.annotated_at, active=False, orphaned=True)
        else:
            raise StoreError(f"unknown annotation action {ev.action!r}")

    def annotate(self, company_id: str, sector_id: str, at: datetime, tree: SectorTree) -> list[AnnotationEvent]:
        """Make `sector_id` the company's single active annotation."""
        self.get(company_id)
        if sector_id not in tree:
            raise UnknownSector(sector_id)
        current = self._active.get(company_id)
        if current is not None and current.sector_id == sector_id:
            return []
        events = []
        if current is not None:
            events.append(self._record(at, company_id, current.sector_id, "remove"))
        events.append(self._record(at, company_id, sector_id, "add"))
        return events

    def unannotate(self, company_id: str, at: datetime) -> list[AnnotationEvent]:
        current = self._active.get(company_id)
        if current is None:
            return []
        return [self._record(at, company_id, current.sector_id, "remove")]

    def orphan_sectors(self, sector_ids: Iterable[str], at: datetime) -> list[str]:
        """Deactivate (and flag) annotations pointing at sectors removed from the framework."""
        gone = set(sector_ids)
        hit = sorted(cid for cid, a in self._active.items() if a.sector_id in gone)
        for cid in hit:
            self._record(at, cid, self._active[cid].sector_id, "remove", reason="orphaned")
        return hit

    def active_annotation(self, company_id: str) -> Annotation | None:
        return self._active.get(company_id)

    def orphaned(self) -> dict[str, Annotation]:
        return dict(self._orphaned)

    def active(self) -> dict[str, Annotation]:
        return dict(self._active)

    def sector_members(self) -> dict[str, frozenset]:
        out: dict[str, set] = {}
        for a in self._active.values():
            out.setdefault(a.sector_id, set()).add(a.company_id)
        return {s: frozenset(m) for s, m in out.items()}

    def members(self, sector_id: str) -> frozenset:
        return frozenset(a.company_id for a in self._active.values() if a.sector_id == sector_id)

    def position(self) -> int:
        return self.events[-1].seq if self.events else 0

    # -- template ---------------------------------------------------------------

    def render(self, company_id: str, tree: SectorTree | None = None) -> FilledSample:
        company = self.get(company_id)
        name = ""
        ann = self._active.get(company_id)
        if ann is not None and tree is not None and ann.sector_id in tree:
            name = tree[ann.sector_id].name
        return render_template(company, name)

    # -- change accounting ---------------------------------------------------

    def snapshot_baseline(self, tree: SectorTree, at: datetime) -> BaselineSnapshot:
        members = {sid: frozenset() for sid in tree.nodes}
        for sid, m in self.sector_members().items():
            if sid in members:
                members[sid] = m
        return BaselineSnapshot(at, self.position(), members)

    def churn(self, sector_id: str, baseline: BaselineSnapshot) -> int:
        """Add + remove events for the sector after the baseline position (Delta_m)."""
        return sum(1 for e in self.events if e.seq > baseline.position and e.sector_id == sector_id)

    def change_ratio(self, sector_id: str, baseline: BaselineSnapshot) -> float:
        base = baseline.count(sector_id)
        if base == 0:
            raise NewSector(sector_id)
        return self.churn(sector_id, baseline) / base


def _event_from_record(rec: Mapping) -> AnnotationEvent:
    return AnnotationEvent(int(rec["seq"]), datetime.fromisoformat(rec["at"]), rec["company_id"],
                           rec["sector_id"], rec["action"], rec.get("reason", ""))


def read_companies(path: str | os.PathLike) -> list[Company]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Company.from_json(json.loads(line)))
        except (ValueError, KeyError) as exc:
            raise StoreError(f"{path}:{lineno}: bad company record ({exc})") from None
    return out


def write_companies(path: str | os.PathLike, companies: Iterable[Company]) -> None:
    lines = [json.dumps(c.to_json(), ensure_ascii=False, sort_keys=True) for c in sorted(companies, key=lambda c: c.id)]
    atomic_write_text(path, "".join(line + "\n" for line in lines))

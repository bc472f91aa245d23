"""Bottom-up annotation attribution over the sector tree."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from sectorgen.framework import ROOT, SectorTree
from sectorgen.store import CompanyStore, FilledSample, UnknownCompany, render_template

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 20


@dataclass(frozen=True)
class SectorReport:
    sector_id: str
    direct: int
    rolled_up: int
    eligible: bool


@dataclass
class AttributionResult:
    eligible: list[tuple[str, frozenset]]
    excluded_companies: frozenset
    threshold_used: int
    report: list[SectorReport] = field(default_factory=list)

    def eligible_counts(self) -> dict[str, int]:
        return {sid: len(members) for sid, members in self.eligible}

    def assignment(self) -> dict[str, str]:
        """company id -> eligible sector id it was attributed to."""
        return {cid: sid for sid, members in self.eligible for cid in members}


def _members(store: CompanyStore | Mapping[str, Iterable[str]]) -> dict[str, frozenset]:
    if isinstance(store, CompanyStore):
        return store.sector_members()
    return {sid: frozenset(cids) for sid, cids in store.items()}


def attribute(tree: SectorTree, store: CompanyStore | Mapping[str, Iterable[str]],
              threshold: int = DEFAULT_THRESHOLD) -> AttributionResult:
    """Roll annotations of under-annotated sectors up to their ancestors.

    Leaves are processed first.  A sector's effective set is its direct
    annotations plus whatever its ineligible children passed up; it is
    eligible when that set reaches `threshold`.  Eligible sectors keep their
    sets, ineligible ones hand them to the parent.  Anything that reaches the
    root is excluded from training.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    direct = _members(store)
    order = tree.depth_first_index()
    effective: dict[str, frozenset] = {}
    passed_up: dict[str, frozenset] = {}
    eligible_ids: set[str] = set()
    # reverse preorder visits every child before its parent
    for nid in reversed(order):
        acc = set(direct.get(nid, ()))
        for child in tree.children(nid):
            acc |= passed_up[child]
        effective[nid] = frozenset(acc)
        if len(acc) >= threshold:
            eligible_ids.add(nid)
            passed_up[nid] = frozenset()
        else:
            passed_up[nid] = effective[nid]

    excluded: set[str] = set()
    for child in tree.children(ROOT):
        excluded |= passed_up[child]
    for sid, cids in direct.items():
        if sid not in tree:
            excluded |= cids

    report = [SectorReport(nid, len(direct.get(nid, ())), len(effective[nid]), nid in eligible_ids) for nid in order]
    return AttributionResult(
        eligible=[(nid, effective[nid]) for nid in order if nid in eligible_ids],
        excluded_companies=frozenset(excluded),
        threshold_used=threshold,
        report=report,
    )


def build_training_set(result: AttributionResult, store: CompanyStore, tree: SectorTree) -> dict[str, list[FilledSample]]:
    """Render every attributed company with its eligible sector's name as the target.

    Companies missing from the store are skipped (logged).
    """
    out: dict[str, list[FilledSample]] = {}
    for sid, members in result.eligible:
        name = tree[sid].name
        samples = []
        for cid in sorted(members):
            try:
                company = store.get(cid)
            except UnknownCompany:
                log.warning("company %s attributed to %s is missing from the store; skipped", cid, sid)
                continue
            samples.append(render_template(company, name))
        out[sid] = samples
    return out


def format_report(result: AttributionResult, tree: SectorTree) -> str:
    lines = ["sector_id\tname\tdirect\trolled_up\teligible"]
    for r in result.report:
        lines.append(f"{r.sector_id}\t{tree[r.sector_id].name}\t{r.direct}\t{r.rolled_up}\t{'yes' if r.eligible else 'no'}")
    lines.append(f"# threshold={result.threshold_used} eligible={len(result.eligible)} excluded={len(result.excluded_companies)}")
    return "\n".join(lines) + "\n"

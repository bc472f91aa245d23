"""Confusion matrix, per-sector precision/recall and the release QA gate.

Assertions file: one assertion per line, tab or whitespace separated::

    vertical software   precision   >   0.75
    overall             accuracy    >=  0.9

Sector names may contain spaces, so the last three fields are parsed from the right.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from sectorgen.persistence import AppendLog
from sectorgen.text import normalize

NOVEL = "<novel>"
OVERALL = "overall"
METRICS = ("precision", "recall", "accuracy")
COMPARATORS = (">", ">=")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold sectors, columns predicted sectors plus a trailing novel column."""

    sectors: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def novel(self) -> np.ndarray:
        return self.counts[:, -1]

    def get(self, gold: str, pred: str) -> int:
        i = self.sectors.index(gold)
        j = len(self.sectors) if pred == NOVEL else self.sectors.index(pred)
        return int(self.counts[i, j])

    def format(self) -> str:
        header = "gold\\pred\t" + "\t".join(self.sectors) + f"\t{NOVEL}"
        rows = [f"{s}\t" + "\t".join(str(int(v)) for v in self.counts[i]) for i, s in enumerate(self.sectors)]
        return "\n".join([header, *rows]) + "\n"


def confusion(golds: Sequence[str], preds: Sequence[str], sector_list: Sequence[str]) -> ConfusionMatrix:
    if len(golds) != len(preds):
        raise ValueError(f"length mismatch: {len(golds)} gold labels vs {len(preds)} predictions")
    sectors = tuple(sector_list)
    index = {normalize(s): i for i, s in enumerate(sectors)}
    counts = np.zeros((len(sectors), len(sectors) + 1), dtype=np.int64)
    for g, p in zip(golds, preds):
        gi = index.get(normalize(g))
        if gi is None:
            raise ValueError(f"gold label {g!r} is not in the sector list")
        counts[gi, index.get(normalize(p), len(sectors))] += 1
    return ConfusionMatrix(sectors, counts)


@dataclass(frozen=True)
class SectorScore:
    precision: float | None  # None = undefined (no predictions for the sector)
    recall: float | None  # None = undefined (no gold samples)
    support: int


@dataclass(frozen=True)
class SectorMetrics:
    per_sector: dict[str, SectorScore]
    accuracy: float | None
    total: int = 0

    def value(self, sector: str, metric: str) -> float | None:
        if metric == "accuracy":
            if sector != OVERALL:
                raise KeyError("accuracy is only defined overall")
            return self.accuracy
        score = self.per_sector.get(sector)
        if score is None:
            raise KeyError(sector)
        return getattr(score, metric)

    def macro(self, metric: str) -> float | None:
        vals = [getattr(s, metric) for s in self.per_sector.values() if getattr(s, metric) is not None]
        return sum(vals) / len(vals) if vals else None

    def format(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        lines = ["sector\tprecision\trecall\tsupport"]
        for name, s in self.per_sector.items():
            lines.append(f"{name}\t{fmt(s.precision)}\t{fmt(s.recall)}\t{s.support}")
        lines.append(f"{OVERALL}\taccuracy={fmt(self.accuracy)}\tmacro_p={fmt(self.macro('precision'))}"
                     f"\tmacro_r={fmt(self.macro('recall'))}\ttotal={self.total}")
        return "\n".join(lines) + "\n"


def metrics(matrix: ConfusionMatrix) -> SectorMetrics:
    c = matrix.counts
    m = len(matrix.sectors)
    diag = np.diag(c[:, :m])
    col = c[:, :m].sum(axis=0)
    row = c.sum(axis=1)
    per = {}
    for i, s in enumerate(matrix.sectors):
        per[s] = SectorScore(
            precision=float(diag[i] / col[i]) if col[i] else None,
            recall=float(diag[i] / row[i]) if row[i] else None,
            support=int(row[i]),
        )
    total = matrix.total
    return SectorMetrics(per, float(diag.sum() / total) if total else None, total)


@dataclass(frozen=True)
class QaAssertion:
    sector: str
    metric: str
    comparator: str
    threshold: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")

    def holds(self, observed: float) -> bool:
        return observed > self.threshold if self.comparator == ">" else observed >= self.threshold

    def __str__(self) -> str:
        return f"{self.metric}({self.sector}) {self.comparator} {self.threshold}"


@dataclass(frozen=True)
class Violation:
    assertion: QaAssertion
    observed: float | None
    reason: str = ""

    def to_json(self) -> dict:
        return {"assertion": str(self.assertion), "observed": self.observed, "reason": self.reason}


@dataclass(frozen=True)
class QaVerdict:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not self.violations


def parse_assertions(text: str) -> list[QaAssertion]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p for p in line.replace("\t", " ").split(" ") if p]
        if len(parts) < 4:
            raise ValueError(f"line {lineno}: expected 'sector metric comparator threshold'")
        sector = " ".join(parts[:-3])
        out.append(QaAssertion(sector, parts[-3], parts[-2], float(parts[-1])))
    return out


def load_assertions(path: str | os.PathLike) -> list[QaAssertion]:
    path = Path(path)
    return parse_assertions(path.read_text(encoding="utf-8")) if path.exists() else []


def qa_gate(scores: SectorMetrics, assertions: Sequence[QaAssertion], alert_log: AppendLog | None = None,
            model_version: str = "", at: datetime | None = None) -> QaVerdict:
    """All assertions must hold; undefined or unknown metrics fail closed.

    A failing verdict appends exactly one alert record to `alert_log`.
    """
    violations = []
    for a in assertions:
        try:
            observed = scores.value(a.sector, a.metric)
        except KeyError:
            violations.append(Violation(a, None, "unknown sector"))
            continue
        if observed is None:
            violations.append(Violation(a, None, "metric undefined"))
        elif not a.holds(observed):
            violations.append(Violation(a, observed))
    verdict = QaVerdict(tuple(violations))
    if not verdict.passed and alert_log is not None:
        alert_log.append({
            "at": (at or datetime.now()).isoformat(),
            "model_version": model_version,
            "violations": [v.to_json() for v in violations],
        })
    return verdict

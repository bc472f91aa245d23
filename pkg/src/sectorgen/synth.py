"""Seeded synthetic corpus: a sector tree, companies whose text is drawn from
per-sector keyword pools, and their annotations."""

from __future__ import annotations

import os
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

from sectorgen.framework import ROOT, SectorTree, save_framework
from sectorgen.persistence import AppendLog
from sectorgen.store import Company, write_companies
from sectorgen.text import tokenize

THEMES: list[tuple[str, list[str]]] = [
    ("financial service", "payments banking lending credit invoicing wallet remittances checkout billing loans mortgage brokerage"),
    ("cyber security", "firewall encryption malware vulnerability phishing authentication intrusion ransomware antivirus threat breach compliance"),
    ("digital health", "patients clinics telemedicine diagnostics hospital wellness therapy pharmacy medical nurses symptoms caregivers"),
    ("food tech", "groceries recipes restaurants meals farming produce kitchen beverages snacks dining nutrition crops"),
    ("clean energy", "solar wind battery renewable grid emissions carbon turbines hydrogen charging photovoltaic efficiency"),
    ("education technology", "students teachers courses classroom tutoring curriculum learning exams school lessons university homework"),
    ("real estate", "property housing tenants rental landlord apartments buildings leasing construction offices homes realty"),
    ("logistics", "shipping freight warehouse fleet trucking parcels couriers inventory cargo routing containers supply"),
    ("gaming", "players esports consoles multiplayer arcade quests avatars tournaments leaderboard puzzles levels gamers"),
    ("human resources", "recruiting hiring payroll employees onboarding talent resumes benefits staffing interviews workforce candidates"),
    ("marketing technology", "advertising campaigns branding seo newsletters influencers audiences promotions leads conversions banners sponsorship"),
    ("travel", "hotels flights tourism booking vacations airlines resorts itineraries cruises hostels luggage destinations"),
    ("automotive", "cars vehicles dealerships engines tires drivers garages mechanics sedans motorcycles windshields headlights"),
    ("legal technology", "contracts lawyers litigation attorneys court paralegals patents notary disputes trademarks lawsuits counsel"),
    ("biotechnology", "genomics proteins enzymes molecules vaccines laboratory cells antibodies sequencing trials compounds biomarkers"),
    ("fashion", "apparel clothing shoes garments designers boutiques textiles jewelry accessories footwear dresses handbags"),
    ("media", "news podcasts journalism publishing magazines broadcasting video films music streaming television radio"),
]
THEMES = [(name, words.split()) for name, words in THEMES]

GROUPS = ["technology", "services", "consumer", "industrials", "life sciences", "media and entertainment"]

FILLER = ("a company that builds develops provides offers platform software solution tools for the modern "
          "small businesses teams customers online secure fast simple global leading innovative affordable "
          "automated data market helps manage connect improve").split()

SYLLABLES = "ka lo ri ve na to mi sa do re lu fi zo ba ne ti ko ra mo vi".split()
SUFFIXES = ["AB", "Inc", "Ltd", "GmbH", "Labs", "Group", "Oy", "SA"]


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_sectors: int = 8
    n_groups: int = 2
    samples_per_sector: int = 40
    keywords_per_sector: int = 12
    description_keywords: int = 5
    tag_count: int = 2
    noise: float = 0.1
    empty_description_rate: float = 0.0
    annotated_at: str = "2024-01-01T00:00:00"

    def validate(self) -> None:
        if self.n_sectors < 1 or self.n_groups < 1 or self.samples_per_sector < 1:
            raise InvalidSpec("sector, group and sample counts must be positive")
        if not 0.0 <= self.noise <= 1.0 or not 0.0 <= self.empty_description_rate <= 1.0:
            raise InvalidSpec("rates must lie in [0, 1]")
        if self.keywords_per_sector < 1 or self.description_keywords < 1:
            raise InvalidSpec("keyword counts must be positive")


@dataclass
class SyntheticCorpus:
    tree: SectorTree
    companies: list[Company]
    annotations: list[tuple[str, str]]  # (company_id, sector_id)
    pools: dict[str, list[str]]  # sector_id -> keyword pool
    annotated_at: datetime = field(default_factory=lambda: datetime(2024, 1, 1))

    def write(self, directory: str | os.PathLike) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "framework": directory / "framework.tsv",
            "companies": directory / "companies.jsonl",
            "annotations": directory / "annotations.log",
        }
        save_framework(self.tree, paths["framework"])
        write_companies(paths["companies"], self.companies)
        if paths["annotations"].exists():
            paths["annotations"].unlink()
        AppendLog(paths["annotations"]).extend(
            {"at": self.annotated_at.isoformat(), "company_id": cid, "sector_id": sid, "action": "add"}
            for cid, sid in self.annotations
        )
        return paths


def _pool(theme_index: int, size: int) -> tuple[str, list[str]]:
    if theme_index < len(THEMES):
        name, words = THEMES[theme_index]
        if size <= len(words):
            return name, words[:size]
        extra = [f"{words[0]}{k}" for k in range(size - len(words))]
        return name, words + extra
    return f"sector {theme_index + 1}", [f"kw{theme_index + 1}x{k}" for k in range(size)]


def _company_name(rng: random.Random) -> str:
    stem = "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3))).capitalize()
    return f"{stem} {rng.choice(SUFFIXES)}"


def gen_corpus(spec: SyntheticSpec, seed: int) -> SyntheticCorpus:
    """Two-layer tree (groups -> leaf sectors) with every leaf annotated `samples_per_sector` times."""
    spec.validate()
    rng = random.Random(seed)
    records: list[tuple[str, str, str]] = []
    groups = []
    for g in range(spec.n_groups):
        gid = f"g{g + 1}"
        records.append((gid, ROOT, GROUPS[g] if g < len(GROUPS) else f"group {g + 1}"))
        groups.append(gid)
    pools: dict[str, list[str]] = {}
    for s in range(spec.n_sectors):
        sid = f"s{s + 1}"
        name, words = _pool(s, spec.keywords_per_sector)
        records.append((sid, groups[s % spec.n_groups], name))
        pools[sid] = words
    tree = SectorTree(records)

    everything = [w for words in pools.values() for w in words]
    companies: list[Company] = []
    annotations: list[tuple[str, str]] = []
    n = 0
    for s, (sid, words) in enumerate(pools.items()):
        for _ in range(spec.samples_per_sector):
            n += 1

            def draw():
                return rng.choice(everything) if rng.random() < spec.noise else rng.choice(words)

            tags = tuple(draw() for _ in range(spec.tag_count))
            if rng.random() < spec.empty_description_rate:
                description = ""
            else:
                tokens = [draw() for _ in range(spec.description_keywords)]
                tokens += rng.sample(FILLER, 3)
                rng.shuffle(tokens)
                description = " ".join(tokens)
            cid = f"c{n:05d}"
            companies.append(Company(cid, _company_name(rng), tags, description))
            annotations.append((cid, sid))
    order = list(range(len(companies)))
    rng.shuffle(order)
    return SyntheticCorpus(tree, companies, [annotations[i] for i in order], pools,
                           datetime.fromisoformat(spec.annotated_at))


def keyword_oracle(texts: Sequence[str], pools: dict[str, list[str]]) -> list[str]:
    """Nearest-centroid keyword classifier: the sector whose pool words occur most often."""
    lookup: dict[str, list[str]] = {}
    for sid, words in pools.items():
        for w in words:
            lookup.setdefault(w, []).append(sid)
    order = list(pools)
    out = []
    for text in texts:
        votes = Counter(sid for tok in tokenize(text) for sid in lookup.get(tok, ()))
        best = max(order, key=lambda sid: (votes[sid], -order.index(sid)))
        out.append(best)
    return out

"""EDA-style text augmentation and per-sector sample balancing.

Lexicon file format: ``word<TAB>syn1,syn2,...`` per line, UTF-8.
"""

from __future__ import annotations

import hashlib
import os
import random
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from sectorgen.store import FilledSample

INTENSITIES = (0.05, 0.1, 0.15, 0.2)
OPERATIONS = ("synonym", "insert", "swap", "delete")


class SynonymLexicon:
    def __init__(self, entries: Mapping[str, Sequence[str]] | None = None):
        self._syn = {w.lower(): [s.lower() for s in syns if s and s.lower() != w.lower()]
                     for w, syns in (entries or {}).items()}

    def __getitem__(self, word: str) -> list[str]:
        return self._syn.get(word.lower(), [])

    def __len__(self) -> int:
        return len(self._syn)

    def words(self) -> list[str]:
        return sorted(self._syn)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SynonymLexicon":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse(cls, text: str) -> "SynonymLexicon":
        entries: dict[str, list[str]] = {}
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            word, _, syns = line.partition("\t")
            entries.setdefault(word.strip(), []).extend(s.strip() for s in syns.split(",") if s.strip())
        return cls(entries)

    @classmethod
    def bundled(cls) -> "SynonymLexicon":
        return cls.parse(resources.files("sectorgen").joinpath("data/lexicon.tsv").read_text(encoding="utf-8"))


def _touch_count(alpha: float, n: int) -> int:
    return max(1, int(alpha * n))


def synonym_replacement(tokens: list[str], n: int, rng: random.Random, lexicon: SynonymLexicon) -> list[str]:
    out = list(tokens)
    candidates = [i for i, t in enumerate(tokens) if lexicon[t]]
    rng.shuffle(candidates)
    for i in candidates[:n]:
        out[i] = rng.choice(lexicon[tokens[i]])
    return out


def random_insertion(tokens: list[str], n: int, rng: random.Random, lexicon: SynonymLexicon) -> list[str]:
    out = list(tokens)
    candidates = [t for t in tokens if lexicon[t]]
    if not candidates:
        return out
    for _ in range(n):
        out.insert(rng.randint(0, len(out)), rng.choice(lexicon[rng.choice(candidates)]))
    return out


def random_swap(tokens: list[str], n: int, rng: random.Random) -> list[str]:
    out = list(tokens)
    if len(out) < 2:
        return out
    for _ in range(n):
        i, j = rng.sample(range(len(out)), 2)
        out[i], out[j] = out[j], out[i]
    return out


def random_deletion(tokens: list[str], n: int, rng: random.Random) -> list[str]:
    if len(tokens) < 2:
        return list(tokens)
    n = min(n, len(tokens) - 1)
    drop = set(rng.sample(range(len(tokens)), n))
    return [t for i, t in enumerate(tokens) if i not in drop]


def perturb(tokens: list[str], op: str, alpha: float, rng: random.Random, lexicon: SynonymLexicon) -> list[str]:
    if not tokens:
        return []
    n = _touch_count(alpha, len(tokens))
    if op == "synonym":
        return synonym_replacement(tokens, n, rng, lexicon)
    if op == "insert":
        return random_insertion(tokens, n, rng, lexicon)
    if op == "swap":
        return random_swap(tokens, n, rng)
    if op == "delete":
        return random_deletion(tokens, n, rng)
    raise ValueError(op)


def eda_augment(sample: FilledSample, seed: int, lexicon: SynonymLexicon) -> FilledSample:
    """Perturb name, tags and description independently; the target is left untouched.

    Each field draws one operation and an intensity from ``INTENSITIES``.
    Tags are treated as tokens of the tag list.
    """
    rng = random.Random(seed)

    def field_op():
        return rng.choice(OPERATIONS), rng.choice(INTENSITIES)

    op, alpha = field_op()
    name = " ".join(perturb(sample.name.split(), op, alpha, rng, lexicon)) or sample.name
    op, alpha = field_op()
    tags = tuple(perturb(list(sample.tags), op, alpha, rng, lexicon))
    op, alpha = field_op()
    description = " ".join(perturb(sample.description.strip().rstrip(".").split(), op, alpha, rng, lexicon))
    return replace(sample, name=name, tags=tags, description=description)


def derive_seed(base_seed: int, sector: str, sample_index: int, copy_index: int) -> int:
    digest = hashlib.sha256(f"{base_seed}|{sector}|{sample_index}|{copy_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class AugmentationPlan:
    zeta: int
    copies: Mapping[str, int]  # augmented copies per original sample

    def target_size(self, sector: str, count: int) -> int:
        return count * (1 + self.copies[sector])


def plan_balance(counts: Mapping[str, int]) -> AugmentationPlan:
    if not counts:
        raise ValueError("no sectors to balance")
    if any(c <= 0 for c in counts.values()):
        raise ValueError("every sector needs at least one sample")
    zeta = 2 * max(counts.values())
    return AugmentationPlan(zeta, {s: zeta // c - 1 for s, c in counts.items()})


def balance(per_sector: Mapping[str, Sequence[FilledSample]], lexicon: SynonymLexicon | None = None,
            base_seed: int = 0) -> dict[str, list[FilledSample]]:
    """Grow every sector to floor(zeta/|C_m|)*|C_m| samples, zeta = 2 * largest sector.

    Originals come first, followed by their augmented copies.
    """
    lexicon = lexicon if lexicon is not None else SynonymLexicon.bundled()
    plan = plan_balance({s: len(v) for s, v in per_sector.items()})
    out: dict[str, list[FilledSample]] = {}
    for sector, samples in per_sector.items():
        balanced = list(samples)
        for i, sample in enumerate(samples):
            for k in range(plan.copies[sector]):
                balanced.append(eda_augment(sample, derive_seed(base_seed, sector, i, k), lexicon))
        out[sector] = balanced
    return out

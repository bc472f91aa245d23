"""Fixtures and independent oracles shared by the test modules."""

from __future__ import annotations

import random
from datetime import datetime, timedelta

import torch

from sectorgen.framework import ROOT, SectorTree
from sectorgen.model import ModelDims, Paradigm, SectorModel, TrainConfig, Vocabulary
from sectorgen.orchestrator import InspectionState, inspect
from sectorgen.model.trainer import Example, build_model, init_backbone, pretrain
from sectorgen.store import Company, CompanyStore, render_template
from sectorgen.synth import SyntheticSpec, gen_corpus

T0 = datetime(2024, 1, 1, 2, 0)

# the subtree used to illustrate attribution: s3 with four children
FIG5_RECORDS = [
    ("s3", ROOT, "software"),
    ("s4", "s3", "vertical software"),
    ("s5", "s3", "horizontal software"),
    ("s6", "s3", "developer tools"),
    ("s7", "s3", "it services"),
]
FIG5_COUNTS = {"s3": 10, "s4": 22, "s5": 23, "s6": 8, "s7": 16}

KLARNA = Company(
    "klarna",
    "Klarna Bank AB",
    ("buy-now-pay-later", "shopping"),
    "an online payment platform designed to facilitate cashless payments",
)


def fig5_tree() -> SectorTree:
    return SectorTree(FIG5_RECORDS)


def fig5_members() -> dict[str, set[str]]:
    out, n = {}, 0
    for sid, count in FIG5_COUNTS.items():
        out[sid] = {f"c{n + i:03d}" for i in range(count)}
        n += count
    return out


def fig5_store() -> CompanyStore:
    store = CompanyStore()
    tree = fig5_tree()
    for sid, cids in sorted(fig5_members().items()):
        for cid in sorted(cids):
            store.upsert_company(Company(cid, f"Company {cid}", ("saas",), f"makes {sid} products"))
            store.annotate(cid, sid, T0, tree)
    return store


def random_tree(rng: random.Random, max_nodes: int = 50, max_depth: int = 4) -> SectorTree:
    n = rng.randint(1, max_nodes)
    records, depth = [], {ROOT: 0}
    for i in range(n):
        parents = [p for p, d in depth.items() if d < max_depth]
        parent = rng.choice(parents)
        nid = f"n{i}"
        records.append((nid, parent, f"sector {i}"))
        depth[nid] = depth[parent] + 1
    return SectorTree(records)


def random_annotations(rng: random.Random, tree: SectorTree, max_annotations: int = 500) -> dict[str, set[str]]:
    ids = list(tree.nodes)
    out: dict[str, set[str]] = {}
    for k in range(rng.randint(0, max_annotations)):
        # skew towards a few sectors so that both eligible and ineligible nodes occur
        sid = ids[min(int(rng.expovariate(0.3)), len(ids) - 1)] if rng.random() < 0.5 else rng.choice(ids)
        out.setdefault(sid, set()).add(f"c{k}")
    return out


def oracle_attribution(tree: SectorTree, members: dict[str, set[str]], threshold: int) -> dict[str, str]:
    """Brute force: decide eligibility deepest-first, then send each company to its lowest eligible ancestor.

    A node's candidate set is every company annotated in its subtree whose path
    up to the node crosses no eligible node.  Returns company -> sector.
    """
    def path_up(sid):
        out = [sid]
        while tree[out[-1]].parent != ROOT:
            out.append(tree[out[-1]].parent)
        return out

    home = {c: sid for sid, cs in members.items() for c in cs}
    paths = {c: path_up(sid) for c, sid in home.items()}
    eligible: set[str] = set()
    for nid in sorted(tree.nodes, key=lambda i: -tree[i].depth):
        cand = 0
        for c, path in paths.items():
            if nid in path and not any(p in eligible for p in path[: path.index(nid)]):
                cand += 1
        if cand >= threshold:
            eligible.add(nid)
    assignment = {}
    for c, path in paths.items():
        for p in path:
            if p in eligible:
                assignment[c] = p
                break
    return assignment


# ---------------------------------------------------------------------------
# model fixtures

TEXTS = [
    "Klarna Bank AB, concerns buy-now-pay-later and shopping, is an online payment platform. Sector:",
    "Solar Oy, concerns solar and wind, is a renewable energy producer. Sector:",
    "Medi Labs, concerns telehealth, is a digital clinic for patients. Sector:",
    "Shipit Inc, concerns freight, is a logistics network for parcels. Sector:",
]
TARGETS = ["financial service", "clean energy", "digital health", "logistics"]


def tiny_vocab() -> Vocabulary:
    return Vocabulary.build(TEXTS + TARGETS, extra=TARGETS)


def tiny_examples() -> list[Example]:
    return [Example(t, s) for t, s in zip(TEXTS, TARGETS)]


def double_model(paradigm: Paradigm, vocab: Vocabulary, seed: int = 0, n_outputs: int | None = None) -> SectorModel:
    backbone = init_backbone(len(vocab), ModelDims(), seed, dtype=torch.float64)
    n = n_outputs if n_outputs is not None else (len(vocab) if paradigm.generative else len(TARGETS))
    return build_model(backbone, paradigm, n, seed)


# ---------------------------------------------------------------------------
# a small synthetic world for orchestrator / inference / cli tests


def small_corpus(seed: int = 0, n_sectors: int = 4, per_sector: int = 20):
    return gen_corpus(SyntheticSpec(n_sectors=n_sectors, n_groups=2, samples_per_sector=per_sector, noise=0.0), seed)


def corpus_store(corpus) -> CompanyStore:
    store = CompanyStore()
    for c in corpus.companies:
        store.upsert_company(c)
    for cid, sid in corpus.annotations:
        store.annotate(cid, sid, T0, corpus.tree)
    return store


def small_pretrained(corpus, steps: int = 30, seed: int = 0):
    texts = [render_template(c).input_text for c in corpus.companies]
    vocab = Vocabulary.build(texts, extra=[n.name for n in corpus.tree.nodes.values()])
    backbone = pretrain([vocab.encode(t) for t in texts], vocab, steps, seed=seed, batch_size=16).backbone
    return backbone, vocab


def small_train_config(**kw):
    base = dict(T=200, t_prime=60, eps1=0.5, eps2=0.1, warmup1=20, warmup2=30, batch_size=32, eval_every=50,
                patience=3, max_gen_len=4)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# inspection decision table

TABLE_TREE = SectorTree([("a", ROOT, "alpha"), ("b", ROOT, "beta")])


def decision_case(ratio: float, framework_changed: bool, days_since_full: int):
    """Decision for one sector with baseline 100 and `ratio * 100` add events since."""
    store = CompanyStore()
    churn = round(ratio * 100)
    for i in range(100 + churn):
        store.upsert_company(Company(f"c{i}", f"n{i}"))
    for i in range(100):
        store.annotate(f"c{i}", "a", T0, TABLE_TREE)
    baseline = store.snapshot_baseline(TABLE_TREE, T0)
    for i in range(100, 100 + churn):
        store.annotate(f"c{i}", "a", T0, TABLE_TREE)
    now = T0 + timedelta(days=days_since_full)
    state = InspectionState(
        last_full_finetune_at=T0,
        baseline=baseline,
        framework_fingerprint="0" * 64 if framework_changed else TABLE_TREE.fingerprint,
        current_model_version="m",
    )
    return inspect(state, store, TABLE_TREE, now)

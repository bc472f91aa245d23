"""The twelve acceptance criteria, one test each.

Every test records a ``CRITERION <n> PASS|FAIL <detail>`` line that is echoed
in the terminal summary, then asserts.  Criteria 7, 8 and 12 train real models
and dominate the runtime (roughly 20 minutes on one CPU core).
"""

import random
import time
from dataclasses import replace
from datetime import timedelta
from pathlib import Path

import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import ACCEPTANCE_LINES
from sectorgen import orchestrator
from sectorgen.attribution import attribute
from sectorgen.augment import SynonymLexicon, plan_balance
from sectorgen.cli import main
from sectorgen.config import RunConfig
from sectorgen.evaluation import QaAssertion, confusion, metrics, qa_gate
from sectorgen.inference import InferenceLedger, PredictionRecord, PredictionStore, load_reduction, select_companies
from sectorgen.model import ModelDims, ModelRegistry, Paradigm, TrainConfig, Vocabulary
from sectorgen.model.trainer import Encoded, build_model, gradient_check, group_hashes, init_backbone, lr_at, pretrain, train
from sectorgen.orchestrator import FinetuneSettings, InspectionState, Scenario, inspect, prepare_dataset, run_finetune
from sectorgen.persistence import AppendLog
from sectorgen.store import Company, CompanyStore, render_template
from sectorgen.synth import gen_corpus
from support import (
    T0,
    corpus_store,
    decision_case,
    double_model,
    fig5_members,
    fig5_tree,
    oracle_attribution,
    random_annotations,
    random_tree,
    small_corpus,
    small_pretrained,
    tiny_examples,
    tiny_vocab,
)

REPORTS = Path(__file__).resolve().parent.parent / "reports"


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"CRITERION {n} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


# -- 1-3: attribution and balancing ----------------------------------------------


def test_01_attribution_fixture():
    start = time.perf_counter()
    result = attribute(fig5_tree(), fig5_members(), 20)
    counts = result.eligible_counts()
    elapsed = time.perf_counter() - start
    record(1, counts == {"s4": 22, "s5": 23, "s3": 34} and elapsed < 1.0, f"eligible={counts} in {elapsed:.3f}s")


def test_02_attribution_matches_oracle():
    start = time.perf_counter()
    mismatches, broken = [], []
    for seed in range(1000):
        rng = random.Random(seed)
        tree = random_tree(rng, 50, 4)
        members = random_annotations(rng, tree, 500)
        threshold = rng.choice([1, 2, 5, 10, 20, 40])
        result = attribute(tree, members, threshold)
        if result.assignment() != oracle_attribution(tree, members, threshold):
            mismatches.append(seed)
        annotated = set().union(*members.values()) if members else set()
        sets = [m for _, m in result.eligible]
        disjoint = sum(len(m) for m in sets) + len(result.excluded_companies) == len(annotated)
        if not disjoint or set().union(*sets, result.excluded_companies) != annotated:
            broken.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatches and not broken and elapsed < 30
    record(2, ok, f"1000 instances, oracle mismatches={mismatches[:5]}, partition violations={broken[:5]}, "
                  f"{elapsed:.1f}s")


def test_03_balancing_bounds():
    failures = []

    @settings(max_examples=500, deadline=None, database=None)
    @given(st.dictionaries(st.text("abcdefgh", min_size=1, max_size=3), st.integers(1, 1000),
                           min_size=1, max_size=20))
    def check(counts):
        plan = plan_balance(counts)
        top = max(counts.values())
        for s, c in counts.items():
            size = plan.target_size(s, c)
            if plan.zeta != 2 * top or not plan.zeta - c < size <= plan.zeta or (c == top and size != plan.zeta):
                failures.append((counts, s, size))

    start = time.perf_counter()
    check()
    elapsed = time.perf_counter() - start
    record(3, not failures and elapsed < 5, f"500 random count vectors, violations={failures[:3]}, {elapsed:.2f}s")


# -- 4-6: model, freezing, schedule --------------------------------------------------


def test_04_gradient_correctness():
    start = time.perf_counter()
    vocab = tiny_vocab()
    model = double_model(Paradigm.PROMPT_PLUS_MODEL_TUNING, vocab)
    assert model.backbone.dims == ModelDims()
    batch = Encoded(tiny_examples(), vocab).batch(range(4), True)
    errors = gradient_check(model, batch, h=1e-5, n_coords=24)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = set(errors) == {"backbone", "head", "prompt"} and worst < 1e-4 and elapsed < 60
    record(4, ok, "max relative error " + ", ".join(f"{g}={e:.2e}" for g, e in sorted(errors.items()))
           + f" in {elapsed:.1f}s")


def hash_trace(paradigm: Paradigm, T: int, t_prime: int):
    vocab = tiny_vocab()
    backbone = init_backbone(len(vocab), ModelDims(), seed=0)
    initial = group_hashes(build_model(backbone, paradigm, len(vocab), 0))["backbone"]
    cfg = TrainConfig(T=T, t_prime=t_prime, eps1=0.5, eps2=0.1, warmup1=10, warmup2=10, batch_size=4,
                      eval_every=T, patience=50, paradigm=paradigm, max_gen_len=4)
    trace = {}
    train(tiny_examples(), tiny_examples(), cfg, backbone, vocab,
          on_step=lambda step, model: trace.__setitem__(step, group_hashes(model)["backbone"]))
    return initial, trace


def test_05_freezing_schedule():
    start = time.perf_counter()
    initial, trace = hash_trace(Paradigm.PROMPT_PLUS_MODEL_TUNING, 100, 50)
    frozen_to_50 = all(trace[s] == initial for s in range(1, 51))
    moved_by_100 = trace[100] != initial
    details = [f"P+M frozen through 50={frozen_to_50}, changed by 100={moved_by_100}"]
    ok = frozen_to_50 and moved_by_100
    for paradigm in (Paradigm.PROMPTING, Paradigm.PROMPT_TUNING):
        initial, trace = hash_trace(paradigm, 100, 50)
        frozen = all(h == initial for h in trace.values()) and len(trace) == 100
        details.append(f"{paradigm.value} frozen for the whole run={frozen}")
        ok = ok and frozen
    elapsed = time.perf_counter() - start
    record(5, ok and elapsed < 60, "; ".join(details) + f"; {elapsed:.1f}s")


def test_06_schedule_values():
    cfg = RunConfig().train  # eps1=0.5, eps2=0.1, warmup1=100, warmup2=150, t'=300
    mid1 = lr_at(cfg.warmup1 // 2, cfg)
    plateau = {lr_at(s, cfg) for s in range(cfg.warmup1, cfg.t_prime + 1)}
    mid2 = lr_at(cfg.t_prime + cfg.warmup2 // 2, cfg)
    ok = mid1 == cfg.eps1 / 2 and plateau == {cfg.eps1} and mid2 == cfg.eps2 / 2
    record(6, ok, f"lr({cfg.warmup1 // 2})={mid1}, plateau {cfg.warmup1}..{cfg.t_prime}={sorted(plateau)}, "
                  f"lr({cfg.t_prime + cfg.warmup2 // 2})={mid2}")


# -- 7-8: learnability on the synthetic corpus -------------------------------------


@pytest.fixture(scope="module")
def desk_world():
    """The default synthetic corpus (8 sectors x 40, noise 0.1), its pretrained backbone and splits."""
    cfg = RunConfig()
    corpus = gen_corpus(cfg.synthetic, 0)
    texts = [render_template(c).input_text for c in corpus.companies]
    vocab = Vocabulary.build(texts, cfg.pretrain.max_vocab, extra=[n.name for n in corpus.tree.nodes.values()])
    start = time.perf_counter()
    backbone = pretrain([vocab.encode(t) for t in texts], vocab, cfg.pretrain.steps, seed=0, dims=cfg.model,
                        batch_size=cfg.pretrain.batch_size, lr=cfg.pretrain.lr).backbone
    pretrain_seconds = time.perf_counter() - start
    train_set, val_set, _ = prepare_dataset(corpus.tree, corpus_store(corpus), cfg.threshold,
                                            SynonymLexicon.bundled(), cfg.train_fraction, 0)
    return cfg, backbone, vocab, train_set, val_set, pretrain_seconds


@pytest.mark.slow
def test_07_desk_scale_learnability(desk_world):
    cfg, backbone, vocab, train_set, val_set, pretrain_seconds = desk_world
    config = replace(cfg.train, T=3000)
    start = time.perf_counter()
    result = train(train_set, val_set, config, backbone, vocab)
    elapsed = time.perf_counter() - start + pretrain_seconds
    steps = result.history[-1]["step"]
    ok = result.best_accuracy >= 0.90 and steps <= 3000 and elapsed < 300
    record(7, ok, f"PromptPlusModelTuning val acc {result.best_accuracy:.4f} (best step {result.best_step}, "
                  f"{steps} steps run) in {elapsed:.0f}s including pretraining")


@pytest.mark.slow
def test_08_paradigm_ordering(desk_world):
    cfg, backbone, vocab, train_set, val_set, _ = desk_world
    paradigms = [Paradigm.PROMPT_PLUS_MODEL_TUNING, Paradigm.PROMPTING, Paradigm.PROMPT_TUNING]
    seeds = range(5)
    acc = {p: [] for p in paradigms}
    for seed in seeds:
        for p in paradigms:
            result = train(train_set, val_set, replace(cfg.train, paradigm=p, seed=seed), backbone, vocab)
            acc[p].append(result.best_accuracy)
    mean = {p: sum(v) / len(v) for p, v in acc.items()}
    bar = max(mean[Paradigm.PROMPTING], mean[Paradigm.PROMPT_TUNING]) - 0.02
    ok = mean[Paradigm.PROMPT_PLUS_MODEL_TUNING] >= bar
    lines = ["paradigm\t" + "\t".join(f"seed{s}" for s in seeds) + "\tmean"]
    lines += [f"{p.value}\t" + "\t".join(f"{a:.4f}" for a in acc[p]) + f"\t{mean[p]:.4f}" for p in paradigms]
    lines.append(f"# margin check: {mean[Paradigm.PROMPT_PLUS_MODEL_TUNING]:.4f} >= {bar:.4f} "
                 f"{'PASS' if ok else 'FAIL'}")
    REPORTS.mkdir(exist_ok=True)
    (REPORTS / "paradigm_ordering.tsv").write_text("\n".join(lines) + "\n")
    record(8, ok, ", ".join(f"{p.value}={mean[p]:.4f}" for p in paradigms)
           + " over 5 seeds (report: reports/paradigm_ordering.tsv)")


# -- 9-11: orchestration ------------------------------------------------------------

FULL, INC, SKIP = Scenario.FULL, Scenario.INCREMENTAL, Scenario.SKIP

# ratio -> (unchanged @45d, unchanged @91d, changed @45d, changed @91d)
DECISION_TABLE = {
    0.05: (SKIP, SKIP, FULL, FULL),
    0.1: (INC, FULL, FULL, FULL),
    0.3: (INC, FULL, FULL, FULL),
    0.74: (INC, FULL, FULL, FULL),
    0.75: (FULL, FULL, FULL, FULL),
    0.9: (FULL, FULL, FULL, FULL),
}


def test_09_decision_table():
    wrong = []
    for ratio, row in DECISION_TABLE.items():
        cases = [(False, 45), (False, 91), (True, 45), (True, 91)]
        for (changed, days), expected in zip(cases, row):
            got = decision_case(ratio, changed, days).scenario
            if got is not expected:
                wrong.append(f"ratio={ratio} changed={changed} days={days}: {got.value} != {expected.value}")
    record(9, not wrong, f"{6 * 2 * 2} cases, mismatches={wrong}")


def test_10_incremental_inference_load():
    start = time.perf_counter()
    rng = random.Random(0)
    store = CompanyStore()
    for i in range(1000):
        store.upsert_company(Company(f"c{i:04d}", f"Company {i}", ("saas",), "makes software"))
    ledger = InferenceLedger()
    model = "m-fixed"

    def infer(ids, day):
        ledger.record(PredictionRecord(cid, "software", None, model, store.companies[cid].feature_version, day)
                      for cid in ids)

    infer(select_companies(store, ledger, model), T0)  # initial population, before the window
    history = []
    for day in range(1, 31):
        now = T0 + timedelta(days=day)
        for cid in rng.sample(sorted(store.companies), 30):
            old = store.companies[cid]
            store.upsert_company(replace(old, description=f"{old.description} update {day}"))
        chosen = select_companies(store, ledger, model)
        infer(chosen, now)
        history.append({"selected": len(chosen), "population": len(store)})
    reduction = load_reduction(history)
    elapsed = time.perf_counter() - start
    exact = all(h["selected"] == 30 for h in history) and abs(reduction - 0.97) < 1e-12
    record(10, exact and reduction >= 0.95 and elapsed < 10,
           f"mean load reduction {reduction:.4f} over 30 days (30 of 1000 changed daily) in {elapsed:.2f}s")


def observed_precision(golds, labels, sector, tp, fp):
    """Predictions for `golds` with exactly tp hits and fp false alarms on `sector`; everything else correct."""
    other = next(lab for lab in labels if lab != sector)
    preds, hits, alarms = [], 0, 0
    for g in golds:
        if g == sector:
            preds.append(sector if hits < tp else other)
            hits += 1
        elif alarms < fp:
            preds.append(sector)
            alarms += 1
        else:
            preds.append(g)
    assert hits >= tp and alarms == fp
    return preds


def test_11_qa_gate(tmp_path, monkeypatch):
    corpus = small_corpus(per_sector=40)
    store = corpus_store(corpus)
    pretrained = small_pretrained(corpus, steps=5)
    _, val_set, labels = prepare_dataset(corpus.tree, store, 20, SynonymLexicon.bundled(), 0.9, 0)
    golds = [e.target_text for e in val_set]
    sector = max(labels, key=golds.count)  # the "vertical software" analog
    rule = QaAssertion(sector, "precision", ">", 0.75)
    settings_ = FinetuneSettings(train=TrainConfig(T=5, t_prime=2, warmup1=1, warmup2=1, batch_size=8),
                                 assertions=(rule,))
    outcomes = {}
    for label, (tp, fp) in {"0.80": (4, 1), "0.70": (7, 3)}.items():
        preds = observed_precision(golds, labels, sector, tp, fp)
        # the trained model is a stand-in; its validation predictions are pinned to the target precision
        monkeypatch.setattr(orchestrator, "predict_texts", lambda *a, preds=preds, **k: list(preds))
        registry = ModelRegistry(tmp_path / label / "registry")
        alerts = AppendLog(tmp_path / label / "alerts.log")
        out = run_finetune(inspect(InspectionState(), store, corpus.tree, T0), corpus.tree, store, registry,
                           settings_, InspectionState(), T0, lambda: pretrained, alert_log=alerts)
        outcomes[label] = (out, registry, alerts)

    passed, reg_pass, alerts_pass = outcomes["0.80"]
    blocked, reg_block, alerts_block = outcomes["0.70"]
    pass_ok = (passed.released and passed.scores.value(sector, "precision") == 0.8
               and reg_pass.current() == passed.model_version and not alerts_pass.exists())
    block_ok = (not blocked.released and blocked.scores.value(sector, "precision") == 0.7
                and reg_block.current() is None and reg_block.versions() == []
                and len(alerts_block.replay()) == 1)
    # the gate on its own, with the same two observations
    direct = [qa_gate(metrics(confusion(golds, observed_precision(golds, labels, sector, tp, fp), labels)), [rule])
              .passed for tp, fp in ((4, 1), (7, 3))]
    record(11, pass_ok and block_ok and direct == [True, False],
           f"({sector}, precision, >, 0.75): observed 0.80 released={passed.released}, "
           f"observed 0.70 released={blocked.released} with {len(alerts_block.replay()) if alerts_block.exists() else 0}"
           " alert record(s)")


# -- 12: end to end ----------------------------------------------------------------


def scripted_pipeline(root: Path) -> dict:
    root.mkdir()
    (root / "run.yaml").write_text("seed: 0\n")
    cfg = ["--config", str(root / "run.yaml")]
    for argv in (["gen-corpus"], ["pretrain"], ["tick", "--now", "2024-02-01T02:00:00"],
                 ["infer", "--now", "2024-02-01T03:00:00"], ["evaluate"]):
        code = main(argv + cfg)
        assert code == 0, (argv, code)
    return {
        "version": (root / "models/registry/CURRENT").read_text().strip(),
        "predictions": (root / "outputs/predictions.tsv").read_bytes(),
        "rows": len(PredictionStore(root / "outputs/predictions.tsv").read()),
        "metrics": (root / "reports/metrics.tsv").read_bytes(),
    }


@pytest.mark.slow
def test_12_end_to_end_determinism(tmp_path, capsys):
    paths = RunConfig().paths
    assert (paths.registry, paths.predictions) == ("models/registry", "outputs/predictions.tsv")
    start = time.perf_counter()
    torch.manual_seed(12345)  # global RNG state must not leak into the run
    first = scripted_pipeline(tmp_path / "a")
    torch.manual_seed(54321)
    second = scripted_pipeline(tmp_path / "b")
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    rows = first["rows"]
    same = first == second and rows == 320
    record(12, same and elapsed < 600,
           f"model {first['version'][:12]} vs {second['version'][:12]}, prediction stores "
           f"{'identical' if first['predictions'] == second['predictions'] else 'DIFFER'} "
           f"({rows} rows), {elapsed:.0f}s for two runs")

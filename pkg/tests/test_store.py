import random
from datetime import timedelta

import pytest
from hypothesis import given, settings, strategies as st

from sectorgen.framework import ROOT, SectorTree
from sectorgen.store import (
    Company,
    CompanyStore,
    NewSector,
    StoreError,
    UnknownCompany,
    UnknownSector,
    read_companies,
    render_template,
    write_companies,
)
from support import FIG5_COUNTS, KLARNA, T0, fig5_store, fig5_tree

TREE = SectorTree([("a", ROOT, "alpha"), ("b", ROOT, "beta"), ("c", "a", "gamma")])


def store_with(n: int) -> CompanyStore:
    store = CompanyStore()
    for i in range(n):
        store.upsert_company(Company(f"c{i}", f"Name {i}", ("t",), "desc"))
    return store


def test_klarna_template():
    sample = render_template(KLARNA)
    assert sample.render() == (
        "Klarna Bank AB, concerns buy-now-pay-later and shopping, is an online payment platform designed to "
        "facilitate cashless payments. Sector: [s]."
    )
    assert sample.input_text.endswith("Sector:")
    assert render_template(KLARNA, "financial service").render().endswith("Sector: financial service.")


def test_missing_fields_drop_clauses():
    assert render_template(Company("x", "Acme", (), "makes rockets")).input_text == "Acme, is makes rockets. Sector:"
    assert render_template(Company("x", "Acme", ("space",), "")).input_text == "Acme, concerns space. Sector:"
    assert render_template(Company("x", "Acme")).input_text == "Acme. Sector:"


def test_three_tags_use_commas():
    sample = render_template(Company("x", "Acme", ("a", "b", "c"), ""))
    assert "concerns a, b and c" in sample.input_text


def test_feature_version():
    base = KLARNA
    assert Company(base.id, base.legal_name, base.tags, base.description).feature_version == base.feature_version
    for changed in (
        Company(base.id, "Klarna", base.tags, base.description),
        Company(base.id, base.legal_name, ("shopping",), base.description),
        Company(base.id, base.legal_name, base.tags, "a bank"),
    ):
        assert changed.feature_version != base.feature_version
    # the id is not a feature
    assert Company("other", base.legal_name, base.tags, base.description).feature_version == base.feature_version


def test_upsert_and_read_back(tmp_path):
    store = CompanyStore(tmp_path / "c.jsonl", tmp_path / "a.log")
    store.upsert_company(KLARNA)
    store.save_companies()
    assert read_companies(tmp_path / "c.jsonl") == [KLARNA]
    with pytest.raises(StoreError):
        store.upsert_company(Company("  ", "x"))


def test_annotation_accounting():
    store = store_with(3)
    base = store.snapshot_baseline(TREE, T0)
    store.annotate("c0", "a", T0, TREE)
    assert store.members("a") == {"c0"}
    events = store.annotate("c0", "b", T0, TREE)
    assert [(e.action, e.sector_id) for e in events] == [("remove", "a"), ("add", "b")]
    assert store.members("a") == set() and store.members("b") == {"c0"}
    assert store.churn("a", base) == 2 and store.churn("b", base) == 1
    assert store.annotate("c0", "b", T0, TREE) == []  # no-op
    with pytest.raises(UnknownSector):
        store.annotate("c1", "zz", T0, TREE)
    with pytest.raises(UnknownCompany):
        store.annotate("nobody", "a", T0, TREE)


def test_change_ratio_examples():
    store = store_with(40)
    for i in range(20):
        store.annotate(f"c{i}", "a", T0, TREE)
    base = store.snapshot_baseline(TREE, T0)
    assert store.change_ratio("a", base) == 0.0
    for i in range(20, 30):
        store.annotate(f"c{i}", "a", T0, TREE)
    for i in range(5):
        store.unannotate(f"c{i}", T0)
    assert store.change_ratio("a", base) == 15 / 20 == 0.75
    with pytest.raises(NewSector):
        store.change_ratio("b", base)


def test_fig5_baseline_counts():
    store = fig5_store()
    snap = store.snapshot_baseline(fig5_tree(), T0)
    assert snap.counts == FIG5_COUNTS
    assert store.snapshot_baseline(fig5_tree(), T0) == snap
    assert CompanyStore().snapshot_baseline(fig5_tree(), T0).counts == {s: 0 for s in FIG5_COUNTS}


def test_orphaning():
    store = fig5_store()
    tree, removed = fig5_tree().remove_node("s4")
    hit = store.orphan_sectors(removed, T0)
    assert len(hit) == 22 and all(store.orphaned()[c].orphaned for c in hit)
    assert "s4" not in store.sector_members()
    with pytest.raises(UnknownSector):
        store.annotate(hit[0], "s4", T0, tree)


ops = st.lists(st.tuples(st.sampled_from(["annotate", "unannotate"]), st.integers(0, 9),
                         st.sampled_from(["a", "b", "c"])), max_size=60)


@settings(max_examples=300, deadline=None)
@given(ops)
def test_single_active_annotation_and_replay(tmp_path_factory, sequence):
    d = tmp_path_factory.mktemp("s")
    store = CompanyStore(d / "c.jsonl", d / "a.log")
    for i in range(10):
        store.upsert_company(Company(f"c{i}", f"n{i}"))
    store.save_companies()
    at = T0
    for op, i, sid in sequence:
        at += timedelta(minutes=1)
        if op == "annotate":
            store.annotate(f"c{i}", sid, at, TREE)
        else:
            store.unannotate(f"c{i}", at)
        # at most one active annotation per company, and counts match members
        members = store.sector_members()
        assert sum(len(m) for m in members.values()) == len(store.active())
    if store.log.exists():
        replayed = CompanyStore.open(d / "c.jsonl", d / "a.log")
        assert replayed.active() == store.active()
        assert replayed.position() == store.position()


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 30), ops)
def test_change_ratio_monotone(n_base, sequence):
    store = store_with(40)
    for i in range(n_base):
        store.annotate(f"c{10 + i}", "a", T0, TREE)
    base = store.snapshot_baseline(TREE, T0)
    last = 0.0
    for op, i, sid in sequence:
        if op == "annotate":
            store.annotate(f"c{i}", sid, T0, TREE)
        else:
            store.unannotate(f"c{i}", T0)
        ratio = store.change_ratio("a", base)
        assert ratio >= last
        last = ratio


@given(st.text(max_size=30), st.lists(st.text(max_size=10), max_size=4), st.text(max_size=40))
def test_render_is_pure(name, tags, desc):
    c = Company("x", name, tuple(tags), desc)
    assert render_template(c) == render_template(Company("x", name, tuple(tags), desc))
    assert render_template(c).input_text.endswith("Sector:")


def test_companies_file_is_sorted_and_stable(tmp_path):
    rng = random.Random(0)
    companies = [Company(f"c{i}", f"n{i}", ("t",), "d") for i in rng.sample(range(50), 50)]
    write_companies(tmp_path / "a.jsonl", companies)
    write_companies(tmp_path / "b.jsonl", reversed(companies))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

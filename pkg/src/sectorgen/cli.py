"""Command-line entry point: ``sectorgen <subcommand> --config run.yaml``.

Exit codes: 0 success, 2 configuration error, 3 QA gate blocked the release,
4 data error.  Failures print ``ERROR <code> <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

from sectorgen.attribution import attribute, build_training_set, format_report
from sectorgen.augment import plan_balance
from sectorgen.config import ConfigError, load_config
from sectorgen.framework import FrameworkError, diff_frameworks, load_framework, show
from sectorgen.inference import load_reduction
from sectorgen.model.checkpoint import CheckpointError
from sectorgen.model.net import Paradigm
from sectorgen.model.trainer import TrainingDiverged
from sectorgen.orchestrator import NoEligibleSectors, Scenario, ScenarioDecision, inspect, run_finetune
from sectorgen.persistence import CorruptLogError, atomic_write_text
from sectorgen.pipeline import Workspace, evaluate_current, run_inference, run_pretrain, tick
from sectorgen.store import StoreError, read_companies
from sectorgen.synth import InvalidSpec, gen_corpus

EXIT_OK, EXIT_CONFIG, EXIT_QA, EXIT_DATA = 0, 2, 3, 4


class QaBlocked(Exception):
    pass


def _now(text: str | None) -> datetime:
    return datetime.fromisoformat(text) if text else datetime.now().replace(microsecond=0)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# -- subcommands ---------------------------------------------------------------


def cmd_gen_corpus(ws: Workspace, args) -> int:
    corpus = gen_corpus(ws.config.synthetic, ws.config.seed)
    paths = corpus.write(Path(args.out) if args.out else ws.config.path("framework").parent)
    _emit({"sectors": corpus.tree.size, "companies": len(corpus.companies), "files": {k: str(v) for k, v in paths.items()}})
    return EXIT_OK


def cmd_pretrain(ws: Workspace, args) -> int:
    info = run_pretrain(ws)
    losses = info.pop("losses")
    info["initial_loss"] = losses[0] if losses else None
    info["final_loss"] = losses[-1] if losses else None
    _emit(info)
    return EXIT_OK


def cmd_framework(ws: Workspace, args) -> int:
    if args.action == "validate":
        tree = load_framework(args.file or ws.config.path("framework"))
        print(f"ok M={tree.size} L={tree.depth} fingerprint={tree.fingerprint}")
    elif args.action == "show":
        tree = load_framework(args.file or ws.config.path("framework"))
        counts = None
        if args.counts:
            counts = {s: len(m) for s, m in ws.store().sector_members().items()}
        print(show(tree, counts))
    else:
        if not args.file or not args.other:
            raise ConfigError("framework diff needs OLD and NEW files")
        delta = diff_frameworks(load_framework(args.file), load_framework(args.other))
        _emit({"added": sorted(delta.added), "removed": sorted(delta.removed), "changed": sorted(delta.changed),
               "layer_added": delta.layer_added, "empty": delta.empty})
    return EXIT_OK


def cmd_ingest(ws: Workspace, args) -> int:
    store = ws.store()
    incoming = read_companies(args.file)
    changed = 0
    for company in incoming:
        old = store.companies.get(company.id)
        if old is None or old.feature_version != company.feature_version:
            changed += 1
        store.upsert_company(company)
    store.save_companies()
    _emit({"ingested": len(incoming), "changed": changed, "total": len(store)})
    return EXIT_OK


def cmd_annotate(ws: Workspace, args) -> int:
    store, tree = ws.store(), ws.tree()
    at = _now(args.now)
    if args.remove:
        events = store.unannotate(args.company, at)
    else:
        if args.sector is None:
            raise ConfigError("annotate needs a SECTOR (or --remove)")
        sector = args.sector if args.sector in tree else (tree.by_name(args.sector).id if tree.by_name(args.sector) else args.sector)
        events = store.annotate(args.company, sector, at, tree)
    _emit([{"seq": e.seq, "action": e.action, "sector_id": e.sector_id} for e in events])
    return EXIT_OK


def cmd_attribute(ws: Workspace, args) -> int:
    tree = ws.tree()
    result = attribute(tree, ws.store(), args.threshold or ws.config.threshold)
    report = format_report(result, tree)
    if args.out:
        atomic_write_text(args.out, report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_balance(ws: Workspace, args) -> int:
    tree, store = ws.tree(), ws.store()
    per_sector = build_training_set(attribute(tree, store, ws.config.threshold), store, tree)
    per_sector = {s: v for s, v in per_sector.items() if v}
    if not per_sector:
        raise NoEligibleSectors("nothing to balance")
    plan = plan_balance({s: len(v) for s, v in per_sector.items()})
    _emit({"zeta": plan.zeta, "sectors": {tree[s].name: {"original": len(v), "copies_per_sample": plan.copies[s],
                                                            "balanced": plan.target_size(s, len(v))}
                                           for s, v in per_sector.items()}})
    return EXIT_OK


def cmd_train(ws: Workspace, args) -> int:
    now = _now(args.now)
    settings = ws.settings()
    if args.paradigm:
        settings = replace(settings, train=replace(settings.train, paradigm=Paradigm(args.paradigm)))
    decision = ScenarioDecision(Scenario.FULL, (("manual", "train subcommand"),))
    with ws.lock():
        state = ws.state()
        outcome = run_finetune(decision, ws.tree(), ws.store(), ws.registry, settings, state, now,
                               ws.pretrained, ws.lexicon(), ws.log("alerts"))
        if outcome.released:
            outcome.state.save(ws.config.path("state"))
    _emit({"status": outcome.status, "model_version": outcome.model_version, "val_accuracy": outcome.val_accuracy,
           "violations": [v.to_json() for v in outcome.verdict.violations]})
    if not outcome.released:
        raise QaBlocked(f"model {outcome.model_version} failed {len(outcome.verdict.violations)} assertion(s)")
    return EXIT_OK


def cmd_inspect(ws: Workspace, args) -> int:
    decision = inspect(ws.state(), ws.store(), ws.tree(), _now(args.now), ws.thresholds())
    _emit(decision.to_json())
    return EXIT_OK


def cmd_tick(ws: Workspace, args) -> int:
    result = tick(ws, _now(args.now))
    out = {"decision": result.decision.to_json(), "outcome": result.outcome,
           "model_version": ws.registry.current()}
    if result.finetune:
        out["val_accuracy"] = result.finetune.val_accuracy
        out["violations"] = [v.to_json() for v in result.finetune.verdict.violations]
    if result.inference:
        out["inference"] = {"selected": result.inference.selected, "population": result.inference.population,
                            "novel": result.inference.novel}
    _emit(out)
    if result.outcome == "qa_blocked":
        raise QaBlocked("QA gate blocked the release; see the alert log")
    return EXIT_OK


def cmd_infer(ws: Workspace, args) -> int:
    with ws.lock():
        res = run_inference(ws, _now(args.now))
    _emit(res.__dict__)
    return EXIT_OK


def cmd_evaluate(ws: Workspace, args) -> int:
    scores, matrix = evaluate_current(ws)
    report_dir = ws.config.path("reports")
    atomic_write_text(report_dir / "metrics.tsv", scores.format())
    atomic_write_text(report_dir / "confusion.tsv", matrix)
    sys.stdout.write(scores.format())
    return EXIT_OK


def cmd_report(ws: Workspace, args) -> int:
    state = ws.state()
    journal = ws.log("journal")
    loads = ws.log("inference_load")
    summary = {
        "current_model_version": ws.registry.current(),
        "released_models": ws.registry.versions(),
        "last_full_finetune_at": state.last_full_finetune_at,
        "ticks": len(journal.replay()) if journal.exists() else 0,
    }
    if loads.exists():
        history = loads.replay()
        if history:
            summary["load_reduction_all"] = load_reduction(history)
            summary["load_reduction_last_30"] = load_reduction(history, 30)
    _emit(summary)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. --set train.T=500")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sectorgen", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "write a seeded synthetic framework, companies and annotations")
    p.add_argument("--out", help="output directory (default: directory of the framework file)")
    add("pretrain", cmd_pretrain, "pretrain the backbone on company texts")
    p = add("framework", cmd_framework, "validate, show or diff framework files")
    p.add_argument("action", choices=["validate", "diff", "show"])
    p.add_argument("file", nargs="?")
    p.add_argument("other", nargs="?")
    p.add_argument("--counts", action="store_true", help="show annotated company counts")
    p = add("ingest", cmd_ingest, "merge company records (JSON lines) into the store")
    p.add_argument("file")
    p = add("annotate", cmd_annotate, "annotate a company with a sector (id or name)")
    p.add_argument("company")
    p.add_argument("sector", nargs="?")
    p.add_argument("--remove", action="store_true")
    p.add_argument("--now")
    p = add("attribute", cmd_attribute, "run annotation attribution and print the report")
    p.add_argument("--threshold", type=int)
    p.add_argument("--out")
    add("balance", cmd_balance, "show the augmentation plan")
    p = add("train", cmd_train, "full finetune now (QA gated), bypassing inspection")
    p.add_argument("--paradigm", choices=[x.value for x in Paradigm])
    p.add_argument("--now")
    p = add("inspect", cmd_inspect, "print today's scenario decision")
    p.add_argument("--now")
    p = add("tick", cmd_tick, "daily run: inspect, then finetune and/or incremental inference")
    p.add_argument("--now")
    p = add("infer", cmd_infer, "incremental inference with the current model")
    p.add_argument("--now")
    add("evaluate", cmd_evaluate, "confusion matrix and per-sector metrics of the current model")
    add("report", cmd_report, "summary of models, ticks and inference load")
    return parser


def _error(code: int, name: str, detail) -> int:
    print(f"ERROR {name} {detail}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        ws = Workspace(load_config(args.config, overrides))
        return args.func(ws, args)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "ConfigError", exc)
    except QaBlocked as exc:
        return _error(EXIT_QA, "QaBlocked", exc)
    except (FrameworkError, StoreError) as exc:
        return _error(EXIT_DATA, getattr(exc, "code", type(exc).__name__), exc)
    except (NoEligibleSectors, CheckpointError, CorruptLogError, InvalidSpec, TrainingDiverged,
            FileNotFoundError, ValueError) as exc:
        return _error(EXIT_DATA, type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())

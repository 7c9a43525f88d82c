"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import backend as backends
from .ingest import (
    IngestError, label_counts, load_classification_dataset, parse_clean, parse_srs, prepare_document,
    strip_labels, write_classification_dataset,
)
from .metrics import ScoringError
from .parse import parse_classification, parse_trace
from .patterns import (
    PromptPattern, TaskKind, catalog_to_json, list_patterns, render_classification_prompt, render_trace_prompt,
)
from .report import FORMATS, ReportError, build_metric_tables, build_report, json_summary, markdown_report, rank_patterns
from .runner import (
    ExperimentPlan, PlanError, RunSpec, audit_records, latest_records, load_plan_data, read_log,
    resume_experiment, rng_for, run_experiment, sample_requirements,
)

log = logging.getLogger("rebench")

BACKENDS = ("live", "replay", "oracle:perfect", "oracle:empty", "oracle:inverted")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> Parser:
    p = Parser(prog="rebench", description="Evaluate prompt patterns on requirements engineering tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=Parser)

    s = sub.add_parser("ingest", help="normalize datasets, write ground truth and clean documents")
    s.add_argument("--promise", type=Path, help="classification CSV (id,text,label)")
    s.add_argument("--srs", type=Path, nargs="+", default=[], help="plain-text SRS documents")
    s.add_argument("--out", type=Path, help="output directory (default: next to each input)")

    s = sub.add_parser("list-patterns", help="show the prompt pattern catalog")
    s.add_argument("--format", choices=("text", "json"), default="text")

    s = sub.add_parser("render", help="print a rendered prompt")
    s.add_argument("--pattern", required=True)
    s.add_argument("--task", required=True)
    s.add_argument("--promise", type=Path)
    s.add_argument("--ids", help="comma-separated requirement ids to embed (classification)")
    s.add_argument("--sample", type=int, default=50, help="random sample size when --ids is absent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--srs", type=Path)
    s.add_argument("--query", help="query requirement id (traceability)")

    for verb in ("run", "resume"):
        s = sub.add_parser(verb, help=f"{verb} an experiment plan")
        s.add_argument("--plan", type=Path, required=True)
        s.add_argument("--backend", choices=BACKENDS, default="live")
        s.add_argument("--fixtures", type=Path, help="fixture directory (replay source, or record target for live)")
        s.add_argument("--out", type=Path, default=Path("results"))
        s.add_argument("--log", type=Path, help="results log (default: OUT/results.jsonl)")
        s.add_argument("--seed", type=int, help="override the plan seed")

    s = sub.add_parser("score", help="print aggregated metric tables for a results log")
    s.add_argument("--log", type=Path, required=True)
    s.add_argument("--format", choices=("markdown", "json"), default="markdown")

    s = sub.add_parser("report", help="write tables, stdevs and rankings")
    s.add_argument("--log", type=Path, nargs="+", required=True)
    s.add_argument("--out", type=Path, default=Path("report"))
    s.add_argument("--format", choices=FORMATS, action="append", help="repeatable; default: all formats")

    s = sub.add_parser("audit", help="re-score every run in a log against ground truth")
    s.add_argument("--plan", type=Path, required=True)
    s.add_argument("--log", type=Path, required=True)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("parse-classification", help="parse a reply read from stdin")
    s.add_argument("--ids", required=True, help="comma-separated sample ids")
    s.add_argument("--pattern")

    s = sub.add_parser("parse-trace", help="parse a reply read from stdin")
    s.add_argument("--query", required=True)
    s.add_argument("--srs", type=Path, help="document giving the id universe")
    s.add_argument("--ids", help="comma-separated id universe instead of --srs")
    return p


def _split(ids: str) -> list[str]:
    return [i.strip() for i in ids.split(",") if i.strip()]


def cmd_ingest(args) -> int:
    if not args.promise and not args.srs:
        raise UsageError("ingest needs --promise and/or --srs")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
    if args.promise:
        reqs = load_classification_dataset(args.promise)
        out = args.out or args.promise.parent
        stem = args.promise.stem
        write_classification_dataset(reqs, out / f"{stem}.normalized.csv")
        write_classification_dataset(strip_labels(reqs), out / f"{stem}.unlabeled.csv")
        c = label_counts(reqs)
        print(f"{args.promise.name}: {c['total']} total, {c['F']} F, {c['NF']} NF")
    for path in args.srs:
        doc, truth, clean = prepare_document(path)
        out = args.out or path.parent
        stem = path.name.split(".")[0]
        (out / f"{stem}.truth.json").write_text(truth.to_json(), encoding="utf-8")
        (out / f"{stem}.clean.txt").write_text(clean.text, encoding="utf-8")
        n_links = sum(len(v) for v in truth.links.values())
        print(f"{doc.name}: {len(doc.requirements)} requirements, {len(truth.links)} referenced, {n_links} links")
    return 0


def cmd_list_patterns(args) -> int:
    if args.format == "json":
        sys.stdout.write(catalog_to_json())
    else:
        for pattern, desc in list_patterns():
            print(f"{pattern.value:<20} {desc}")
    return 0


def cmd_render(args) -> int:
    try:
        task = TaskKind.parse(args.task)
        pattern = PromptPattern.parse(args.pattern)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if task is TaskKind.CLASSIFICATION:
        if not args.promise:
            raise UsageError("classification rendering needs --promise")
        reqs = strip_labels(load_classification_dataset(args.promise, require_labels=False))
        if args.ids:
            by_id = {r.id: r for r in reqs}
            missing = [i for i in _split(args.ids) if i not in by_id]
            if missing:
                raise UsageError(f"unknown ids: {', '.join(missing)}")
            sample = [by_id[i] for i in _split(args.ids)]
        else:
            rng = rng_for(args.seed, task, RunSpec(pattern.value, 0.0, 0))
            sample = sample_requirements(reqs, min(args.sample, len(reqs)), rng)
        prompt = render_classification_prompt(pattern, sample)
    else:
        if not args.srs or not args.query:
            raise UsageError("traceability rendering needs --srs and --query")
        _, _, clean = prepare_document(args.srs)
        query = parse_clean(clean).get(args.query) if args.query in clean.ids else None
        if query is None:
            raise UsageError(f"query {args.query} is not a requirement of {args.srs}")
        prompt = render_trace_prompt(pattern, query, clean)
    sys.stdout.write(prompt.text)
    return 0


def _make_backend(args, plan: ExperimentPlan, data):
    kind = args.backend
    if kind == "live":
        b = backends.LiveBackend()
        return backends.RecordingBackend(b, args.fixtures) if args.fixtures else b
    if kind == "replay":
        if not args.fixtures:
            raise UsageError("--backend replay needs --fixtures")
        return backends.ReplayBackend(args.fixtures)
    mode = kind.split(":", 1)[1]
    if plan.task is TaskKind.CLASSIFICATION:
        return backends.make_oracle_backend(data.classes, mode)
    return backends.make_oracle_backend([(d, t) for d, t, _, _ in data.documents], mode)


def _plan(args) -> ExperimentPlan:
    plan = ExperimentPlan.load(args.plan)
    if getattr(args, "seed", None) is not None:
        plan.seed = args.seed
    return plan


def cmd_run(args, resume: bool) -> int:
    plan = _plan(args)
    data = load_plan_data(plan)
    backend = _make_backend(args, plan, data)
    log_path = args.log or args.out / "results.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    if resume:
        records = resume_experiment(plan, log_path, backend, data)
    else:
        if log_path.exists() and log_path.stat().st_size:
            raise UsageError(f"{log_path} already exists; use 'resume' or choose another --out")
        records = run_experiment(plan, backend, log_path, data)
    failed = sum(1 for r in records if not r.ok)
    print(f"{len(records)} runs executed ({failed} failed) -> {log_path}")
    return 0


def _records(paths) -> list:
    out = []
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"results log not found: {p}")
        out.extend(latest_records(read_log(p)))
    return out


def cmd_score(args) -> int:
    tables = build_metric_tables(_records([args.log]))
    try:
        rankings = rank_patterns(tables)
    except ReportError:
        rankings = None
    sys.stdout.write(markdown_report(tables, rankings) if args.format == "markdown" else json_summary(tables, rankings))
    return 0


def cmd_report(args) -> int:
    paths = build_report(_records(args.log), args.out, args.format or FORMATS)
    for p in paths:
        print(p)
    return 0


def cmd_audit(args) -> int:
    plan = _plan(args)
    problems = audit_records(plan, read_log(args.log))
    for p in problems:
        print(p)
    n = len(read_log(args.log))
    print(f"audited {n} records: {'OK' if not problems else f'{len(problems)} inconsistencies'}")
    return 0 if not problems else 2


def cmd_parse_classification(args) -> int:
    pred = parse_classification(sys.stdin.read(), _split(args.ids), args.pattern)
    json.dump({"labels": {k: v.value for k, v in pred.labels.items()}, "unparsed_ids": list(pred.unparsed_ids),
               "shapes": list(pred.shapes), "parse_empty": pred.parse_empty}, sys.stdout, indent=2)
    print()
    return 0


def cmd_parse_trace(args) -> int:
    if args.srs:
        universe = parse_srs(args.srs).ids
    elif args.ids:
        universe = _split(args.ids)
    else:
        raise UsageError("parse-trace needs --srs or --ids")
    pred = parse_trace(sys.stdin.read(), args.query, universe)
    json.dump({"linked_ids": sorted(pred.linked_ids)}, sys.stdout, indent=2)
    print()
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "ingest": cmd_ingest,
        "list-patterns": cmd_list_patterns,
        "render": cmd_render,
        "run": lambda a: cmd_run(a, resume=False),
        "resume": lambda a: cmd_run(a, resume=True),
        "score": cmd_score,
        "report": cmd_report,
        "audit": cmd_audit,
        "parse-classification": cmd_parse_classification,
        "parse-trace": cmd_parse_trace,
    }
    try:
        return handlers[args.verb](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rebench: error: {exc}", file=sys.stderr)
        return 1
    except (IngestError, PlanError, ReportError, ScoringError, backends.BackendError,
            FileNotFoundError, OSError, ValueError, KeyError) as exc:
        print(f"rebench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

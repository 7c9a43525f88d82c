"""Metric tables, pattern rankings and report files built from a results log."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .metrics import METRICS, AggregateStats, aggregate
from .patterns import PromptPattern, TaskKind

log = logging.getLogger(__name__)

RANKING_KEY = ("mean F-score over temperatures (higher first), then cross-temperature F-score stdev "
               "(lower first), then mean precision (higher first), then catalog order")
OVERALL = "Overall"
FORMATS = ("markdown", "csv", "json")


class ReportError(ValueError):
    pass


def pattern_order(names: Iterable[str]) -> list[str]:
    builtin = [p.value for p in PromptPattern]
    names = set(names)
    return [n for n in builtin if n in names] + sorted(names - set(builtin))


def _temp(t: float) -> str:
    return f"{t:.1f}"


@dataclass
class PatternRow:
    pattern: str
    stats: AggregateStats | None
    missing_temperatures: list[float] = field(default_factory=list)
    runs: int = 0
    failed: int = 0
    parse_empty: int = 0
    degenerate_runs: int = 0
    followups: int = 0
    truncated: int = 0

    @property
    def complete(self) -> bool:
        return self.stats is not None and not self.missing_temperatures

    @property
    def stdev_degenerate(self) -> bool:
        return self.stats is None or len(self.stats.per_temperature_mean) < 2 or bool(self.missing_temperatures)


@dataclass
class MetricTable:
    task: str
    temperatures: list[float]
    rows: dict[str, PatternRow]


def build_metric_tables(records, temperatures: Sequence[float] | None = None) -> dict[str, MetricTable]:
    """Group successful runs per task and pattern and aggregate them.

    The temperature grid defaults to every temperature seen for the task.
    A pattern without successful runs at some grid temperature gets that
    temperature listed as missing and its stdev flagged degenerate.
    """
    records = list(records)
    if not records:
        raise ReportError("results log is empty")
    by_task: dict[str, list] = {}
    for r in records:
        by_task.setdefault(r.task, []).append(r)
    tables = {}
    for task in [t.value for t in TaskKind if t.value in by_task] + sorted(set(by_task) - {t.value for t in TaskKind}):
        recs = by_task[task]
        grid = sorted({float(t) for t in temperatures} if temperatures else {float(r.temperature) for r in recs})
        rows = {}
        for pattern in pattern_order(r.pattern for r in recs):
            group = [r for r in recs if r.pattern == pattern]
            ok = [r for r in group if r.ok and r.metrics is not None]
            present = {float(r.temperature) for r in ok}
            row = PatternRow(
                pattern,
                aggregate(ok) if ok else None,
                [t for t in grid if t not in present],
                runs=len(ok),
                failed=sum(1 for r in group if not r.ok),
                parse_empty=sum(1 for r in ok if r.parse_notes.get("parse_empty")),
                degenerate_runs=sum(1 for r in ok if r.metrics.degenerate_flags),
                followups=sum(1 for r in ok if r.parse_notes.get("followups")),
                truncated=sum(1 for r in ok if r.parse_notes.get("truncated")),
            )
            rows[pattern] = row
        tables[task] = MetricTable(task, grid, rows)
    return tables


@dataclass(frozen=True)
class RankEntry:
    rank: int
    pattern: str
    f_mean: float
    f_stdev: float
    precision_mean: float
    tied: bool = False


@dataclass
class PatternRanking:
    scope: str
    entries: list[RankEntry]

    @property
    def order(self) -> list[str]:
        return [e.pattern for e in self.entries]


@dataclass
class Rankings:
    scopes: dict[str, PatternRanking]
    notes: list[str] = field(default_factory=list)
    key: str = RANKING_KEY

    def __getitem__(self, scope: str) -> PatternRanking:
        return self.scopes[scope]


def _keys(table: MetricTable) -> dict[str, tuple[float, float, float]]:
    out = {}
    for name, row in table.rows.items():
        if not row.complete:
            raise ReportError(f"{table.task}: pattern {name} has no runs at temperatures "
                              f"{row.missing_temperatures or table.temperatures}")
        s = row.stats
        # rounded so float noise from averaging cannot decide a rank
        out[name] = tuple(round(v, 10) for v in (s.overall_mean("f_score"), s.cross_temperature_stdev["f_score"],
                                                 s.overall_mean("precision")))
    return out


def _rank(scope: str, keys: Mapping[str, tuple[float, float, float]]) -> PatternRanking:
    catalog = pattern_order(keys)
    ordered = sorted(keys, key=lambda p: (-keys[p][0], keys[p][1], -keys[p][2], catalog.index(p)))
    entries = []
    for i, p in enumerate(ordered):
        tied = any(keys[q] == keys[p] for q in ordered if q != p)
        entries.append(RankEntry(i + 1, p, *keys[p], tied=tied))
    return PatternRanking(scope, entries)


def rank_patterns(tables: Mapping[str, MetricTable]) -> Rankings:
    if not tables:
        raise ReportError("no tables to rank")
    per_task = {task: _keys(t) for task, t in tables.items()}
    scopes = {task: _rank(task, keys) for task, keys in per_task.items()}
    notes = []
    tasks = [t.value for t in TaskKind]
    if all(t in per_task for t in tasks):
        a, b = (per_task[t] for t in tasks)
        if set(a) != set(b):
            raise ReportError("the two tasks were run with different pattern sets")
        overall = {p: tuple((x + y) / 2 for x, y in zip(a[p], b[p])) for p in a}
        scopes[OVERALL] = _rank(OVERALL, overall)
    else:
        notes.append("Overall ranking omitted: results cover only "
                     + ", ".join(sorted(per_task)) + ".")
    for ranking in scopes.values():
        if any(e.tied for e in ranking.entries):
            notes.append(f"{ranking.scope}: some patterns tie on every ranking criterion; "
                         "tied patterns are listed in catalog order.")
    return Rankings(scopes, notes)


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def pct(v: float | None) -> str:
    return "n/a" if v is None or math.isnan(v) else f"{100 * v:.1f}%"


def markdown_report(tables: Mapping[str, MetricTable], rankings: Rankings | None) -> str:
    out = io.StringIO()
    w = out.write
    w("# Prompt pattern evaluation report\n\n")
    w(f"Ranking key: {RANKING_KEY}.\n\n")
    w("Stdev: population standard deviation of the per-temperature means "
      "(the all-runs variant is in the CSV and JSON outputs).\n\n")
    footnotes: list[str] = []
    for task, table in tables.items():
        temps = " / ".join(f"t={_temp(t)}" for t in table.temperatures)
        w(f"## {task}\n\n### Performance measures\n\nEach cell: {temps}\n\n")
        w("| Pattern | Precision | Recall | F-Score | Accuracy |\n|---|---|---|---|---|\n")
        for name, row in table.rows.items():
            cells = []
            for m in METRICS:
                vals = []
                for t in table.temperatures:
                    ms = row.stats.per_temperature_mean.get(t) if row.stats else None
                    vals.append(pct(ms.get(m)) if ms else "n/a")
                cells.append(" / ".join(vals))
            w(f"| {name} | " + " | ".join(cells) + " |\n")
        w("\n### Standard deviation across temperatures\n\n")
        w("| Pattern | P-STDEV | R-STDEV | F-STDEV | A-STDEV |\n|---|---|---|---|---|\n")
        for name, row in table.rows.items():
            mark = " [d]" if row.stdev_degenerate else ""
            if row.stats is None:
                vals = ["n/a"] * 4
            else:
                vals = [pct(row.stats.cross_temperature_stdev[m]) + mark for m in METRICS]
            w(f"| {name} | " + " | ".join(vals) + " |\n")
        w("\n### Runs\n\n| Pattern | Scored | Failed | Parse-empty | Degenerate metrics | Follow-ups | Truncated |\n"
          "|---|---|---|---|---|---|---|\n")
        for name, row in table.rows.items():
            w(f"| {name} | {row.runs} | {row.failed} | {row.parse_empty} | {row.degenerate_runs} | "
              f"{row.followups} | {row.truncated} |\n")
            if row.missing_temperatures:
                footnotes.append(f"{task}/{name}: no successful runs at t="
                                 + ", ".join(_temp(t) for t in row.missing_temperatures)
                                 + "; stdev marked [d] (degenerate).")
            elif row.stdev_degenerate:
                footnotes.append(f"{task}/{name}: fewer than two temperatures; stdev marked [d] (degenerate).")
            if row.failed:
                footnotes.append(f"{task}/{name}: {row.failed} failed run(s) excluded from aggregation.")
            if row.parse_empty:
                footnotes.append(f"{task}/{name}: {row.parse_empty} run(s) yielded no ids or labels "
                                 "(scored as predicting no positives).")
            if row.degenerate_runs:
                footnotes.append(f"{task}/{name}: {row.degenerate_runs} run(s) had an undefined precision, "
                                 "recall or F-score, reported as 0.")
        w("\n")
    if rankings is not None and rankings.scopes:
        scopes = list(rankings.scopes)
        w("## Pattern ranking\n\n| Rank | " + " | ".join(scopes) + " |\n|---|" + "---|" * len(scopes) + "\n")
        depth = max(len(r.entries) for r in rankings.scopes.values())
        for i in range(depth):
            cells = []
            for s in scopes:
                e = rankings.scopes[s].entries
                cells.append((e[i].pattern + (" (tied)" if e[i].tied else "")) if i < len(e) else "")
            w(f"| {i + 1} | " + " | ".join(cells) + " |\n")
        w("\n")
    if rankings is not None:
        footnotes.extend(rankings.notes)
    if footnotes:
        w("## Notes\n\n")
        for n in footnotes:
            w(f"- {n}\n")
    return out.getvalue()


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def metrics_csv(table: MetricTable) -> str:
    rows: list[list] = [["pattern", "temperature", "metric", "value", "percent", "runs"]]
    for name, row in table.rows.items():
        for t in table.temperatures:
            ms = row.stats.per_temperature_mean.get(t) if row.stats else None
            n = row.stats.runs_per_temperature.get(t, 0) if row.stats else 0
            for m in METRICS:
                if ms is None:
                    rows.append([name, _temp(t), m, "", "", 0])
                else:
                    rows.append([name, _temp(t), m, f"{ms.get(m):.4f}", f"{100 * ms.get(m):.1f}", n])
    return _csv(rows)


def stdev_csv(table: MetricTable) -> str:
    rows: list[list] = [["pattern", "metric", "stdev", "stdev_percent", "all_runs_stdev", "degenerate"]]
    for name, row in table.rows.items():
        for m in METRICS:
            if row.stats is None:
                rows.append([name, m, "", "", "", "true"])
                continue
            s = row.stats.cross_temperature_stdev[m]
            rows.append([name, m, f"{s:.4f}", f"{100 * s:.1f}", f"{row.stats.all_runs_stdev[m]:.4f}",
                         "true" if row.stdev_degenerate else "false"])
    return _csv(rows)


def rankings_csv(rankings: Rankings) -> str:
    rows: list[list] = [["scope", "rank", "pattern", "f_mean", "f_stdev", "precision_mean", "tied"]]
    for scope, r in rankings.scopes.items():
        for e in r.entries:
            rows.append([scope, e.rank, e.pattern, f"{e.f_mean:.4f}", f"{e.f_stdev:.4f}",
                         f"{e.precision_mean:.4f}", "true" if e.tied else "false"])
    return _csv(rows)


def json_summary(tables: Mapping[str, MetricTable], rankings: Rankings | None) -> str:
    payload: dict = {"ranking_key": RANKING_KEY, "tasks": {}}
    for task, table in tables.items():
        entry = {}
        for name, row in table.rows.items():
            s = row.stats
            entry[name] = {
                "temperatures": {_temp(t): s.per_temperature_mean[t].as_dict()
                                 for t in table.temperatures if s and t in s.per_temperature_mean},
                "stdev": dict(s.cross_temperature_stdev) if s else None,
                "all_runs_stdev": dict(s.all_runs_stdev) if s else None,
                "stdev_degenerate": row.stdev_degenerate,
                "runs": row.runs, "failed": row.failed, "parse_empty": row.parse_empty,
            }
        payload["tasks"][task] = entry
    if rankings is not None:
        payload["rankings"] = {scope: [e.pattern for e in r.entries] for scope, r in rankings.scopes.items()}
        payload["ranking_notes"] = rankings.notes
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_report(tables: Mapping[str, MetricTable], rankings: Rankings | None, out_dir: str | Path,
                formats: Iterable[str] = FORMATS) -> list[Path]:
    """Write the requested report files into ``out_dir`` and return their paths."""
    formats = list(formats)
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ReportError(f"unknown report format(s): {sorted(bad)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out}: {exc}") from None
    files: dict[str, str] = {}
    if "markdown" in formats:
        files["report.md"] = markdown_report(tables, rankings)
    if "csv" in formats:
        for task, table in tables.items():
            files[f"metrics_{task}.csv"] = metrics_csv(table)
            files[f"stdev_{task}.csv"] = stdev_csv(table)
        if rankings is not None:
            files["rankings.csv"] = rankings_csv(rankings)
    if "json" in formats:
        files["summary.json"] = json_summary(tables, rankings)
    written = []
    for name, text in files.items():
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ReportError(f"cannot write {path}: {exc}") from None
        written.append(path)
    return written


def build_report(records, out_dir, formats=FORMATS, temperatures=None) -> list[Path]:
    tables = build_metric_tables(records, temperatures)
    try:
        rankings = rank_patterns(tables)
    except ReportError as exc:
        log.warning("ranking skipped: %s", exc)
        rankings = Rankings({}, [f"Ranking omitted: {exc}"])
    return emit_report(tables, rankings, out_dir, formats)

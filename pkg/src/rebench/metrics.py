"""Confusion counts, the four performance measures and their aggregates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .ingest import ReqClass
from .parse import ClassificationPrediction, TracePrediction

log = logging.getLogger(__name__)

METRICS = ("precision", "recall", "f_score", "accuracy")


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ScoringError(f"negative confusion count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class MetricSet:
    precision: float
    recall: float
    f_score: float
    accuracy: float
    degenerate_flags: frozenset[str] = frozenset()

    def get(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict:
        d = {m: self.get(m) for m in METRICS}
        d["degenerate_flags"] = sorted(self.degenerate_flags)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricSet":
        return cls(*(float(d[m]) for m in METRICS), frozenset(d.get("degenerate_flags", ())))


def score_classification(pred: ClassificationPrediction, truth: Mapping[str, ReqClass],
                         sample_ids: Iterable[str] | None = None) -> ConfusionCounts:
    """Count outcomes with NF as the positive class.

    The universe is the sample: labelled plus unparsed ids, or ``sample_ids``
    when given. Unparsed ids count as predicted F.
    """
    universe = list(sample_ids) if sample_ids is not None else [*pred.labels, *pred.unparsed_ids]
    missing = [i for i in [*universe, *pred.labels] if i not in truth]
    if missing:
        raise ScoringError(f"ids without ground truth: {sorted(set(missing))}")
    tp = fp = fn = tn = 0
    for rid in dict.fromkeys(universe):
        predicted_nf = pred.predicted(rid) is ReqClass.NF
        actual_nf = truth[rid] is ReqClass.NF
        if predicted_nf and actual_nf:
            tp += 1
        elif predicted_nf:
            fp += 1
        elif actual_nf:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def score_trace(pred: TracePrediction, truth_links: Iterable[str], universe: Iterable[str]) -> ConfusionCounts:
    universe = set(universe)
    truth = set(truth_links)
    predicted = set(pred.linked_ids)
    if not truth <= universe:
        raise ScoringError(f"ground-truth links outside universe: {sorted(truth - universe)}")
    if not predicted <= universe:
        raise ScoringError(f"predicted links outside universe: {sorted(predicted - universe)}")
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    tn = len(universe - (predicted | truth))
    return ConfusionCounts(tp, fp, fn, tn)


def compute_metrics(c: ConfusionCounts) -> MetricSet:
    """Precision, recall, F-score and accuracy.

    A zero denominator gives 0 and a flag instead of an exception.
    """
    if c.total == 0:
        raise ScoringError("cannot compute metrics from all-zero counts")
    flags = set()
    if c.tp + c.fp:
        precision = c.tp / (c.tp + c.fp)
    else:
        precision = 0.0
        flags.add("precision_undefined")
    if c.tp + c.fn:
        recall = c.tp / (c.tp + c.fn)
    else:
        recall = 0.0
        flags.add("recall_undefined")
    if precision + recall > 0:
        f_score = 2 * precision * recall / (precision + recall)
    else:
        f_score = 0.0
        flags.add("f_undefined")
    accuracy = (c.tp + c.tn) / c.total
    return MetricSet(precision, recall, f_score, accuracy, frozenset(flags))


def _pstdev(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


def mean_metrics(sets: Iterable[MetricSet]) -> MetricSet:
    sets = list(sets)
    if not sets:
        raise ScoringError("cannot average an empty group")
    flags = frozenset().union(*(s.degenerate_flags for s in sets))
    return MetricSet(*(math.fsum(s.get(m) for s in sets) / len(sets) for m in METRICS), flags)


@dataclass
class AggregateStats:
    per_temperature_mean: dict[float, MetricSet]
    cross_temperature_stdev: dict[str, float]
    # population stdev over every individual run, emitted alongside
    all_runs_stdev: dict[str, float] = field(default_factory=dict)
    runs_per_temperature: dict[float, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def overall_mean(self, metric: str) -> float:
        vals = [m.get(metric) for m in self.per_temperature_mean.values()]
        return math.fsum(vals) / len(vals)


def aggregate(records) -> AggregateStats:
    """Aggregate the scored runs of one pattern/task group.

    ``records`` need ``temperature`` and ``metrics`` attributes. Per
    temperature the metrics are averaged over repetitions; the spread is the
    population standard deviation of those per-temperature means.
    """
    groups: dict[float, list[MetricSet]] = {}
    for r in records:
        if r.metrics is None:
            continue
        groups.setdefault(float(r.temperature), []).append(r.metrics)
    if not groups:
        raise ScoringError("cannot aggregate an empty group")
    means = {t: mean_metrics(groups[t]) for t in sorted(groups)}
    notes = []
    if len(means) < 2:
        msg = f"only one temperature ({next(iter(means))}) present; cross-temperature stdev is 0"
        log.warning(msg)
        notes.append(msg)
    stdev = {m: _pstdev([s.get(m) for s in means.values()]) for m in METRICS}
    every = [s for t in sorted(groups) for s in groups[t]]
    all_runs = {m: _pstdev([s.get(m) for s in every]) for m in METRICS}
    return AggregateStats(means, stdev, all_runs, {t: len(groups[t]) for t in sorted(groups)}, notes)

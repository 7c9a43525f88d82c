"""Experiment grid execution with seeded sampling and a JSON-lines results log.

Random streams: every run gets its own ``numpy.random.PCG64`` generator
seeded with ``SeedSequence(plan.seed, spawn_key=(task, crc32(pattern),
round(100 * temperature), repetition))`` where ``task`` is 0 for
classification and 1 for traceability. Runs therefore draw the same samples
regardless of execution order or of which other runs are in the plan.
"""
from __future__ import annotations

import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backend import Backend, BackendError, FollowUpPolicy, ModelConfig, TEMPERATURE_GRID
from .ingest import (
    CleanDocument, Requirement, SrsDocument, TraceGroundTruth, load_classification_dataset,
    parse_clean, prepare_document, strip_labels,
)
from .metrics import ConfusionCounts, MetricSet, compute_metrics, score_classification, score_trace
from .parse import ClassificationPrediction, TracePrediction, parse_classification, parse_trace
from .patterns import PromptPattern, TaskKind, load_catalog, render_classification_prompt, render_trace_prompt

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class PlanError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    task: TaskKind
    patterns: list[str] = field(default_factory=lambda: [p.value for p in PromptPattern])
    temperatures: list[float] = field(default_factory=lambda: list(TEMPERATURE_GRID))
    repetitions: int = 5
    sample_size: int = 50
    seed: int = 0
    dataset: Path | None = None
    documents: list[Path] = field(default_factory=list)
    model: ModelConfig = field(default_factory=ModelConfig)
    followup: FollowUpPolicy = field(default_factory=FollowUpPolicy)
    max_in_flight: int = 4
    catalog: Path | None = None

    def __post_init__(self):
        self.task = TaskKind.parse(self.task) if isinstance(self.task, str) else self.task
        if self.repetitions < 1:
            raise PlanError("repetitions must be >= 1")
        if not self.temperatures:
            raise PlanError("temperatures must not be empty")
        if any(not 0.0 <= t <= 1.0 for t in self.temperatures):
            raise PlanError("temperatures must lie in [0, 1]")
        if not self.patterns:
            raise PlanError("patterns must not be empty")
        if self.sample_size < 1:
            raise PlanError("sample_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise PlanError("seed must be an unsigned 64-bit integer")
        if self.max_in_flight < 1:
            raise PlanError("max_in_flight must be >= 1")
        if self.catalog is None:
            self.patterns = [PromptPattern.parse(p).value for p in self.patterns]
        if self.task is TaskKind.CLASSIFICATION and self.dataset is None:
            raise PlanError("classification plan needs a dataset")
        if self.task is TaskKind.TRACEABILITY and not self.documents:
            raise PlanError("traceability plan needs at least one document")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentPlan":
        base = Path(base_dir)
        known = {"task", "patterns", "temperatures", "repetitions", "sample_size", "seed", "dataset",
                 "documents", "model", "followup", "max_in_flight", "catalog"}
        unknown = set(d) - known
        if unknown:
            raise PlanError(f"unknown plan fields: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k in ("task", "patterns", "temperatures", "repetitions",
                                                  "sample_size", "seed", "max_in_flight")}
        if "temperatures" in kw:
            kw["temperatures"] = [float(t) for t in kw["temperatures"]]
        if d.get("dataset"):
            kw["dataset"] = base / d["dataset"]
        if d.get("documents"):
            kw["documents"] = [base / p for p in d["documents"]]
        if d.get("catalog"):
            kw["catalog"] = base / d["catalog"]
        if d.get("model"):
            kw["model"] = ModelConfig(**d["model"])
        if d.get("followup"):
            kw["followup"] = FollowUpPolicy(**d["followup"])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PlanError(f"cannot read plan {path}: {exc}") from None
        return cls.from_dict(raw, path.parent)


@dataclass
class RunRecord:
    run_id: str
    seed: int
    pattern: str
    task: str
    temperature: float
    repetition: int
    status: str = "ok"
    error: str | None = None
    document: str | None = None
    payload_ids: list[str] = field(default_factory=list)
    prompt_text: str = ""
    response: dict | None = None
    prediction: dict | None = None
    confusion: ConfusionCounts | None = None
    metrics: MetricSet | None = None
    parse_notes: dict = field(default_factory=dict)
    timestamps: dict | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "seed": self.seed,
            "pattern": self.pattern,
            "task": self.task,
            "temperature": self.temperature,
            "repetition": self.repetition,
            "status": self.status,
            "error": self.error,
            "document": self.document,
            "payload_ids": self.payload_ids,
            "prompt_text": self.prompt_text,
            "response": self.response,
            "prediction": self.prediction,
            "confusion": self.confusion.as_dict() if self.confusion else None,
            "metrics": self.metrics.as_dict() if self.metrics else None,
            "parse_notes": self.parse_notes,
            "timestamps": self.timestamps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported results schema {d.get('schema_version')!r}")
        return cls(
            run_id=d["run_id"], seed=d["seed"], pattern=d["pattern"], task=d["task"],
            temperature=float(d["temperature"]), repetition=d["repetition"], status=d["status"],
            error=d.get("error"), document=d.get("document"), payload_ids=list(d.get("payload_ids", [])),
            prompt_text=d.get("prompt_text", ""), response=d.get("response"), prediction=d.get("prediction"),
            confusion=ConfusionCounts(**d["confusion"]) if d.get("confusion") else None,
            metrics=MetricSet.from_dict(d["metrics"]) if d.get("metrics") else None,
            parse_notes=d.get("parse_notes") or {}, timestamps=d.get("timestamps"),
        )


@dataclass(frozen=True)
class RunSpec:
    pattern: str
    temperature: float
    repetition: int


@dataclass
class PlanData:
    """Datasets loaded for a plan."""

    requirements: list[Requirement] = field(default_factory=list)
    documents: list[tuple[SrsDocument, TraceGroundTruth, CleanDocument, SrsDocument]] = field(default_factory=list)

    @property
    def classes(self):
        return {r.id: r.label for r in self.requirements}

    def document(self, name: str):
        for entry in self.documents:
            if entry[2].name == name or entry[0].name == name:
                return entry
        raise KeyError(name)

    def trace_candidates(self) -> list[tuple[int, str]]:
        return [(i, q) for i, (doc, truth, _, _) in enumerate(self.documents)
                for q in doc.ids if truth.for_query(q)]


def load_plan_data(plan: ExperimentPlan) -> PlanData:
    if plan.task is TaskKind.CLASSIFICATION:
        reqs = load_classification_dataset(plan.dataset)
        if plan.sample_size > len(reqs):
            raise PlanError(f"sample_size {plan.sample_size} exceeds dataset size {len(reqs)}")
        return PlanData(requirements=reqs)
    docs = []
    for path in plan.documents:
        doc, truth, clean = prepare_document(path)
        docs.append((doc, truth, clean, parse_clean(clean)))
    data = PlanData(documents=docs)
    if not data.trace_candidates():
        raise PlanError("no document requirement has an incoming trace link")
    return data


def run_id_for(seed: int, task: TaskKind, spec: RunSpec) -> str:
    key = f"{seed}|{task.value}|{spec.pattern}|{spec.temperature:.2f}|{spec.repetition}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def rng_for(seed: int, task: TaskKind, spec: RunSpec) -> np.random.Generator:
    spawn_key = (0 if task is TaskKind.CLASSIFICATION else 1, zlib.crc32(spec.pattern.encode()),
                 int(round(spec.temperature * 100)), spec.repetition)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def plan_specs(plan: ExperimentPlan) -> list[RunSpec]:
    return [RunSpec(p, float(t), r) for p in plan.patterns for t in plan.temperatures
            for r in range(plan.repetitions)]


def sample_requirements(reqs: Sequence[Requirement], n: int, rng: np.random.Generator) -> list[Requirement]:
    """Draw ``n`` distinct requirements without replacement."""
    if n > len(reqs):
        raise ValueError(f"cannot sample {n} requirements from {len(reqs)}")
    if n < 0:
        raise ValueError("sample size must be non-negative")
    idx = rng.choice(len(reqs), size=n, replace=False)
    return [reqs[int(i)] for i in idx]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _prediction_dict(pred) -> dict:
    if isinstance(pred, ClassificationPrediction):
        return {"labels": {k: v.value for k, v in pred.labels.items()}, "unparsed_ids": list(pred.unparsed_ids)}
    return {"linked_ids": sorted(pred.linked_ids)}


def prediction_from_record(rec: RunRecord):
    from .ingest import ReqClass

    p = rec.prediction or {}
    if rec.task == TaskKind.CLASSIFICATION.value:
        return ClassificationPrediction({k: ReqClass(v) for k, v in p.get("labels", {}).items()},
                                        tuple(p.get("unparsed_ids", ())))
    return TracePrediction(frozenset(p.get("linked_ids", ())))


class Runner:
    def __init__(self, plan: ExperimentPlan, backend: Backend, data: PlanData | None = None):
        self.plan = plan
        self.backend = backend
        self.data = data or load_plan_data(plan)
        self.catalog = load_catalog(plan.catalog) if plan.catalog else None
        self.unlabeled = strip_labels(self.data.requirements)

    def execute(self, spec: RunSpec) -> RunRecord:
        plan = self.plan
        rec = RunRecord(run_id_for(plan.seed, plan.task, spec), plan.seed, spec.pattern, plan.task.value,
                        spec.temperature, spec.repetition)
        if not self.backend.deterministic:
            rec.timestamps = {"started": _now()}
        rng = rng_for(plan.seed, plan.task, spec)
        config = plan.model.with_temperature(spec.temperature)
        try:
            if plan.task is TaskKind.CLASSIFICATION:
                sample = sample_requirements(self.unlabeled, plan.sample_size, rng)
                prompt = render_classification_prompt(spec.pattern, sample, self.catalog)
            else:
                candidates = self.data.trace_candidates()
                doc_idx, query_id = candidates[int(rng.integers(len(candidates)))]
                _, _, clean, clean_doc = self.data.documents[doc_idx]
                prompt = render_trace_prompt(spec.pattern, clean_doc.get(query_id), clean, self.catalog)
                rec.document = clean.name
            rec.payload_ids = list(prompt.payload_ids)
            rec.prompt_text = prompt.text
            response = self.backend.complete(prompt, config, plan.followup, repetition=spec.repetition)
        except BackendError as exc:
            rec.status = "failed"
            rec.error = f"{type(exc).__name__}: {exc}"
            attempts = list(getattr(exc, "attempts", ()))
            rec.parse_notes = {"attempts": len(attempts), "attempt_log": attempts}
            log.error("run %s failed: %s", rec.run_id, rec.error)
            if rec.timestamps is not None:
                rec.timestamps["finished"] = _now()
            return rec
        rec.response = response.to_dict()
        rec.prediction, rec.confusion, notes = self.score(rec, response)
        rec.metrics = compute_metrics(rec.confusion)
        rec.parse_notes = {**notes, "followups": response.followups, "truncated": response.truncated,
                           "attempts": len(response.attempts)}
        if rec.timestamps is not None:
            rec.timestamps["finished"] = _now()
        return rec

    def score(self, rec: RunRecord, response) -> tuple[dict, ConfusionCounts, dict]:
        if rec.task == TaskKind.CLASSIFICATION.value:
            pred = parse_classification(response, rec.payload_ids, rec.pattern)
            counts = score_classification(pred, self.data.classes, rec.payload_ids)
            notes = {"shapes": list(pred.shapes), "conflicts": list(pred.conflicts),
                     "parse_empty": pred.parse_empty, "unparsed": len(pred.unparsed_ids)}
            return _prediction_dict(pred), counts, notes
        doc, truth, _, _ = self.data.document(rec.document)
        query = rec.payload_ids[0]
        pred = parse_trace(response, query, doc.ids)
        counts = score_trace(pred, truth.for_query(query), set(doc.ids) - {query})
        notes = {"shapes": ["dotted-ids"] if pred.linked_ids else [], "parse_empty": not pred.linked_ids}
        return _prediction_dict(pred), counts, notes

    def run(self, specs: Iterable[RunSpec], log_path: str | Path | None = None) -> list[RunRecord]:
        specs = list(specs)
        out = []
        fh = Path(log_path).open("a", encoding="utf-8") if log_path else None
        try:
            with ThreadPoolExecutor(max_workers=self.plan.max_in_flight) as pool:
                futures = [pool.submit(self.execute, s) for s in specs]
                # commit in plan order so the log is reproducible
                for fut in futures:
                    rec = fut.result()
                    out.append(rec)
                    if fh:
                        fh.write(rec.to_json() + "\n")
                        fh.flush()
        finally:
            if fh:
                fh.close()
        return out


def run_experiment(plan: ExperimentPlan, backend: Backend, log_path: str | Path | None = None,
                   data: PlanData | None = None) -> list[RunRecord]:
    """Run the whole pattern x temperature x repetition grid."""
    return Runner(plan, backend, data).run(plan_specs(plan), log_path)


def read_log(path: str | Path, *, repair: bool = False) -> list[RunRecord]:
    """Read a results log. A torn final line is dropped (and removed with ``repair``)."""
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError:
            if i != len(lines) - 1:
                raise ValueError(f"{path}:{i + 1}: corrupt record") from None
            log.warning("dropping torn final line of %s", path)
            if repair:
                path.write_text("".join(l + "\n" for l in lines[:i]), encoding="utf-8")
    return records


def latest_records(records: Iterable[RunRecord]) -> list[RunRecord]:
    """Keep the last record per run id, e.g. a successful retry of a failed run."""
    latest: dict[str, RunRecord] = {}
    for r in records:
        latest.pop(r.run_id, None)
        latest[r.run_id] = r
    return list(latest.values())


def resume_experiment(plan: ExperimentPlan, log_path: str | Path, backend: Backend,
                      data: PlanData | None = None) -> list[RunRecord]:
    """Execute the runs of ``plan`` that the log does not yet hold as successful.

    Returns the newly executed records.
    """
    existing = read_log(log_path, repair=True)
    expected = {run_id_for(plan.seed, plan.task, s): s for s in plan_specs(plan)}
    for r in existing:
        if r.seed != plan.seed or r.run_id not in expected:
            raise PlanError(f"log {log_path} does not belong to this plan (run {r.run_id}, seed {r.seed})")
    done = {r.run_id for r in latest_records(existing) if r.ok}
    todo = [s for rid, s in expected.items() if rid not in done]
    log.info("resuming: %d of %d runs left", len(todo), len(expected))
    return Runner(plan, backend, data).run(todo, log_path)


def audit_records(plan: ExperimentPlan, records: Iterable[RunRecord], data: PlanData | None = None) -> list[str]:
    """Re-score every stored prediction and report inconsistencies."""
    data = data or load_plan_data(plan)
    problems = []
    for rec in records:
        if not rec.ok:
            continue
        pred = prediction_from_record(rec)
        try:
            if rec.task == TaskKind.CLASSIFICATION.value:
                counts = score_classification(pred, data.classes, rec.payload_ids)
            else:
                doc, truth, _, _ = data.document(rec.document)
                q = rec.payload_ids[0]
                counts = score_trace(pred, truth.for_query(q), set(doc.ids) - {q})
        except (KeyError, ValueError) as exc:
            problems.append(f"{rec.run_id}: cannot re-score ({exc})")
            continue
        if counts != rec.confusion:
            problems.append(f"{rec.run_id}: stored {rec.confusion} != re-scored {counts}")
        elif rec.metrics != compute_metrics(counts):
            problems.append(f"{rec.run_id}: stored metrics differ from recomputed metrics")
    return problems

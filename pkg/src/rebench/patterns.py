"""Prompt pattern catalog and prompt rendering for the two tasks."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .ingest import CleanDocument, Requirement, normalize_whitespace


class PromptPattern(str, enum.Enum):
    COGNITIVE_VERIFIER = "CognitiveVerifier"
    CONTEXT_MANAGER = "ContextManager"
    PERSONA = "Persona"
    QUESTION_REFINEMENT = "QuestionRefinement"
    TEMPLATE = "Template"

    @classmethod
    def parse(cls, name: str) -> "PromptPattern":
        key = name.replace(" ", "").replace("_", "").replace("-", "").lower()
        for p in cls:
            if p.value.lower() == key:
                return p
        raise ValueError(f"unknown prompt pattern {name!r}")


class TaskKind(str, enum.Enum):
    CLASSIFICATION = "BinaryClassification"
    TRACEABILITY = "Traceability"

    @classmethod
    def parse(cls, name: str) -> "TaskKind":
        key = name.replace(" ", "").replace("_", "").replace("-", "").lower()
        if key in ("binaryclassification", "classification", "classify"):
            return cls.CLASSIFICATION
        if key in ("traceability", "tracing", "trace"):
            return cls.TRACEABILITY
        raise ValueError(f"unknown task {name!r}")


SLOT = "[deprecated]"

# Instruction texts, one per (pattern, task). Kept byte-for-byte; the
# traceability templates carry the query slot.
CATALOG: dict[PromptPattern, dict[TaskKind, str]] = {
    PromptPattern.COGNITIVE_VERIFIER: {
        TaskKind.CLASSIFICATION: (
            "Classify the given list of requirements into functional (labelled as F) and "
            "non-functional requirements (labelled as NF). Ask me questions if needed to break "
            "the given task into smaller subtasks. All the outputs to the smaller subtasks must "
            "be combined before you generate the final output."
        ),
        TaskKind.TRACEABILITY: (
            "List the IDs of requirements that are related to the [deprecated] feature in the "
            "requirements specification document below. Ask me questions if needed to break down "
            "the given task into smaller subtasks. All the outputs to the smaller subtasks must "
            "be combined before you generate the final output."
        ),
    },
    PromptPattern.CONTEXT_MANAGER: {
        TaskKind.CLASSIFICATION: (
            "Classify the given list of requirements into functional (labelled as F) and "
            "non-functional requirements (labelled as NF). When you provide an answer, please "
            "explain the reasoning and assumptions behind your response. If possible, address any "
            "potential ambiguities or limitations in your answer, in order to provide a more "
            "complete and accurate response."
        ),
        TaskKind.TRACEABILITY: (
            "List the IDs of requirements that are related to the [deprecated] feature from the "
            "requirements specification document below. When you provide an answer, please "
            "explain the reasoning and assumptions behind your response. If possible, address any "
            "potential ambiguities or limitations in your answer in order to provide a more "
            "complete and accurate response."
        ),
    },
    PromptPattern.PERSONA: {
        TaskKind.CLASSIFICATION: (
            "Act as a requirements engineering domain expert and classify the given list of "
            "requirements into functional (labelled as F) and non-functional requirements "
            "(labelled as NF)."
        ),
        TaskKind.TRACEABILITY: (
            "Act as a requirements engineering domain expert and list the IDs of requirements "
            "that are dependent on the [deprecated] feature in the following requirements "
            "specification document:"
        ),
    },
    PromptPattern.QUESTION_REFINEMENT: {
        TaskKind.CLASSIFICATION: (
            "Classify the given list of requirements into functional (labelled as F) and "
            "non-functional requirements (labelled as NF). If needed, suggest a better version of "
            "the question to use that incorporates information specific to this task and ask me "
            "if I would like to use your question instead."
        ),
        TaskKind.TRACEABILITY: (
            "List the IDs of requirements that are related to the [deprecated] feature from the "
            "requirements specification document below. If needed, suggest a better version of "
            "the question to use that incorporates information specific to this task and ask me "
            "if I would like to use your question instead."
        ),
    },
    PromptPattern.TEMPLATE: {
        TaskKind.CLASSIFICATION: (
            "Read the following list of requirements and return the IDs of non-functional "
            "requirements only. Write the result as a list like: (ID=X) (ID=Y) (ID=Z) where X, Y, "
            "and Z are IDs of non-functional requirements."
        ),
        TaskKind.TRACEABILITY: (
            "List the IDs of requirements that are related to the [deprecated] feature in the "
            "requirements specification document below. Follow the provided template when "
            "generating the output: ID list: X.X.X.X; X.X.X; X.X.X.X etc."
        ),
    },
}

DESCRIPTIONS = {
    PromptPattern.COGNITIVE_VERIFIER: "Invites the model to split the task into sub-questions and combine the answers.",
    PromptPattern.CONTEXT_MANAGER: "Asks the model to explain its reasoning, assumptions and ambiguities.",
    PromptPattern.PERSONA: "Has the model act as a requirements engineering domain expert.",
    PromptPattern.QUESTION_REFINEMENT: "Lets the model propose a better version of the question before answering.",
    PromptPattern.TEMPLATE: "Fixes the output format the model must follow.",
}


@dataclass(frozen=True)
class RenderedPrompt:
    pattern: PromptPattern | str
    task: TaskKind
    text: str
    payload_ids: tuple[str, ...]
    document: str | None = None

    @property
    def pattern_name(self) -> str:
        return getattr(self.pattern, "value", self.pattern)


Catalog = Mapping[str, Mapping[TaskKind, str]]


def _template(pattern: PromptPattern | str, task: TaskKind, catalog: Catalog | None) -> str:
    if catalog is not None:
        name = getattr(pattern, "value", pattern)
        try:
            return catalog[name][task]
        except KeyError:
            raise KeyError(f"pattern {name!r} has no {task.value} template in catalog") from None
    return CATALOG[PromptPattern.parse(getattr(pattern, "value", pattern))][task]


def resolve_slot(query: Requirement) -> str:
    return f'requirement {query.id} ("{normalize_whitespace(query.text)}")'


def render_classification_prompt(pattern: PromptPattern | str, sample: Sequence[Requirement],
                                 catalog: Catalog | None = None) -> RenderedPrompt:
    if not sample:
        raise ValueError("cannot render a classification prompt for an empty sample")
    if any(r.label is not None for r in sample):
        raise ValueError("classification sample must be unlabeled")
    instruction = _template(pattern, TaskKind.CLASSIFICATION, catalog)
    lines = "\n".join(f"{r.id}. {normalize_whitespace(r.text)}" for r in sample)
    return RenderedPrompt(pattern, TaskKind.CLASSIFICATION, f"{instruction}\n\n{lines}\n",
                          tuple(r.id for r in sample))


def render_trace_prompt(pattern: PromptPattern | str, query: Requirement, doc: CleanDocument,
                        catalog: Catalog | None = None) -> RenderedPrompt:
    if query.id not in doc.ids:
        raise KeyError(f"query requirement {query.id} is not in document {doc.name!r}")
    instruction = _template(pattern, TaskKind.TRACEABILITY, catalog).replace(SLOT, resolve_slot(query))
    return RenderedPrompt(pattern, TaskKind.TRACEABILITY, f"{instruction}\n\n{doc.text.rstrip()}\n",
                          (query.id,), doc.name)


def list_patterns() -> list[tuple[PromptPattern, str]]:
    return [(p, DESCRIPTIONS[p]) for p in PromptPattern]


def catalog_to_json(catalog: Catalog | None = None) -> str:
    if catalog is None:
        catalog = {p.value: t for p, t in CATALOG.items()}
    payload = {name: {task.value: text for task, text in tasks.items()} for name, tasks in catalog.items()}
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def load_catalog(path: str | Path) -> dict[str, dict[TaskKind, str]]:
    """Load a pattern -> task -> template JSON file.

    Traceability templates must contain the ``[deprecated]`` slot.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    catalog: dict[str, dict[TaskKind, str]] = {}
    for name, tasks in raw.items():
        entry = {TaskKind.parse(t): text for t, text in tasks.items()}
        trace = entry.get(TaskKind.TRACEABILITY)
        if trace is not None and SLOT not in trace:
            raise ValueError(f"{name}: traceability template lacks the {SLOT} slot")
        catalog[name] = entry
    return catalog

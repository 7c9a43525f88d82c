"""Turn free-form model replies into structured predictions.

The classification parser is deliberately lenient. It understands:

* ``(ID=x)`` lists, where a listed id means NF
* id-led lines carrying a label: ``x: NF``, ``x - F``, ``x. text (NF)``,
  ``x,NF``, markdown table rows ``| x | ... | NF |``
* grouped lists: ``Functional: 1, 3`` / ``Non-functional: 2``
* section headers (``Non-functional requirements:``) followed by id-led
  lines with no label of their own

Every shape that contributed a label is reported in ``shapes``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .ingest import ID_PATTERN, ReqClass
from .patterns import PromptPattern, TaskKind

_LIST_TOKEN = re.compile(r"\(\s*ID\s*[=:]\s*([^()\s]+?)\s*\)", re.IGNORECASE)
_LABEL_TOKEN = re.compile(
    r"(?<![\w-])(?:(NF|NFR|FR|F)|((?i:non[\s-]?functional|functional)))(?![\w-])"
)
_LEAD = re.compile(
    r"^[\s>*•·\-+#|]*(?:\*\*)?(?:(?i:requirement|req\.?|id)\s*[=:#]?\s*)?\(?([A-Za-z0-9_][A-Za-z0-9_.\-]*)"
)
_GROUP = re.compile(
    r"^[\s>*•·\-+#]*(?:\*\*)?((?i:non[\s-]?functional|functional)|NFR?|FR?)"
    r"(?:\s+(?i:requirements?|reqs?))?(?:\s*\([^)]*\))?(?:\*\*)?\s*[:\-–]\s*(.*)$"
)
_INTERROGATIVE = re.compile(
    r"(?im)^\W*(?:could you|would you|can you|do you|should i|shall i|may i|what|which|how|"
    r"is it|are there|did you|before i|to clarify)\b"
)


def _text_of(response) -> str:
    text = getattr(response, "text", response)
    return text if isinstance(text, str) else ""


def _label(match: re.Match) -> ReqClass:
    short, long_ = match.group(1), match.group(2)
    if short:
        return ReqClass.NF if short.startswith("N") else ReqClass.F
    return ReqClass.NF if long_.lower().startswith("non") else ReqClass.F


@dataclass(frozen=True)
class ClassificationPrediction:
    labels: dict[str, ReqClass]
    unparsed_ids: tuple[str, ...]
    shapes: tuple[str, ...] = ()
    conflicts: tuple[str, ...] = ()
    parse_empty: bool = False

    def predicted(self, req_id: str) -> ReqClass:
        # unlabeled ids count as the negative class
        return self.labels.get(req_id, ReqClass.F)


@dataclass(frozen=True)
class TracePrediction:
    linked_ids: frozenset[str] = field(default_factory=frozenset)


def parse_classification(response, sample_ids: Sequence[str],
                         pattern: PromptPattern | str | None = None) -> ClassificationPrediction:
    """Extract per-id F/NF labels for ``sample_ids`` from a reply.

    Never raises. When several shapes label the same id the later mention
    wins, as replies usually end with the combined final answer.
    """
    text = _text_of(response)
    sample = list(dict.fromkeys(str(s) for s in sample_ids))
    members = set(sample)
    labels: dict[str, ReqClass] = {}
    shapes: list[str] = []
    conflicts: set[str] = set()

    def assign(rid: str, cls: ReqClass, shape: str) -> None:
        if rid in labels and labels[rid] is not cls:
            conflicts.add(rid)
        labels[rid] = cls
        if shape not in shapes:
            shapes.append(shape)

    section: ReqClass | None = None
    for line in text.splitlines():
        listed = [m.group(1).rstrip(".,;") for m in _LIST_TOKEN.finditer(line)]
        listed = [rid for rid in listed if rid in members]
        if listed:
            for rid in listed:
                assign(rid, ReqClass.NF, "id-list")
            continue

        g = _GROUP.match(line)
        if g:
            cls = ReqClass.NF if g.group(1).lower().startswith("n") else ReqClass.F
            rest = g.group(2)
            ids = [t for t in re.split(r"[\s,;]+", rest) if t.rstrip(".") in members]
            if ids:
                for t in ids:
                    assign(t.rstrip("."), cls, "grouped")
                section = None
                continue
            if not rest.strip(" *_"):
                section = cls
                continue

        lead = _LEAD.match(line)
        if not lead:
            continue
        rid = lead.group(1).rstrip(".-")
        if rid not in members:
            continue
        tail = line[lead.end():]
        found = list(_LABEL_TOKEN.finditer(tail))
        if found:
            assign(rid, _label(found[-1]), "id-line")
        elif section is not None:
            assign(rid, section, "section")

    is_template = pattern is not None and getattr(pattern, "value", pattern) == PromptPattern.TEMPLATE.value
    if is_template:
        for rid in sample:
            labels.setdefault(rid, ReqClass.F)
    ordered = {rid: labels[rid] for rid in sample if rid in labels}
    unparsed = tuple(rid for rid in sample if rid not in labels)
    return ClassificationPrediction(
        labels=ordered,
        unparsed_ids=unparsed,
        shapes=tuple(shapes),
        conflicts=tuple(sorted(conflicts)),
        parse_empty=not is_template and not ordered,
    )


def extract_ids(response) -> list[str]:
    return list(dict.fromkeys(ID_PATTERN.findall(_text_of(response))))


def parse_trace(response, query_id: str, doc_ids: Iterable[str]) -> TracePrediction:
    universe = set(doc_ids)
    found = {i for i in extract_ids(response) if i in universe and i != query_id}
    return TracePrediction(frozenset(found))


def looks_like_question(text: str) -> bool:
    stripped = text.strip()
    if not stripped:
        return False
    return stripped.endswith("?") or _INTERROGATIVE.search(stripped) is not None


def is_clarifying_question(response, prompt) -> bool:
    """Heuristic used by the follow-up policy.

    A reply counts as a clarifying question when the task parser finds no
    answer in it and it either ends with a question mark or has a line that
    opens with an interrogative.
    """
    text = _text_of(response)
    if prompt.task is TaskKind.CLASSIFICATION:
        pred = parse_classification(text, prompt.payload_ids, prompt.pattern)
        answered = bool(pred.shapes)
    else:
        query = prompt.payload_ids[0] if prompt.payload_ids else None
        answered = any(i != query for i in extract_ids(text))
    return not answered and looks_like_question(text)

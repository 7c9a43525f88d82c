"""Dataset loading, ground-truth construction and clean-document generation.

Two dataset families are handled:

* classification CSVs with a ``id,text,label`` header (labels ``F``/``NF``)
* plain-text SRS documents whose requirements start with a dotted numeric id
  such as ``3.2.1`` or ``3.2.1.4`` at the beginning of a line
"""
from __future__ import annotations

import csv
import enum
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence


class IngestError(ValueError):
    pass


class ReqClass(str, enum.Enum):
    F = "F"
    NF = "NF"

    @classmethod
    def parse(cls, token: str) -> "ReqClass":
        t = token.strip().upper().replace("_", "-")
        if t in ("F", "FR", "FUNCTIONAL"):
            return cls.F
        if t in ("NF", "NFR", "NON-FUNCTIONAL", "NONFUNCTIONAL", "NON FUNCTIONAL"):
            return cls.NF
        raise IngestError(f"unknown label token {token!r}")


@dataclass(frozen=True)
class Requirement:
    id: str
    text: str
    label: ReqClass | None = None
    source: str = ""


@dataclass(frozen=True)
class SrsDocument:
    name: str
    requirements: tuple[Requirement, ...]
    raw_text: str

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.requirements)

    def get(self, req_id: str) -> Requirement:
        for r in self.requirements:
            if r.id == req_id:
                return r
        raise KeyError(req_id)


@dataclass(frozen=True)
class TraceGroundTruth:
    # query id -> ids of the requirements whose body references it
    links: dict[str, frozenset[str]] = field(default_factory=dict)

    def for_query(self, query_id: str) -> frozenset[str]:
        return self.links.get(query_id, frozenset())

    def to_json(self) -> str:
        payload = {k: sorted(v) for k, v in sorted(self.links.items())}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TraceGroundTruth":
        raw = json.loads(text)
        return cls({k: frozenset(v) for k, v in raw.items()})


@dataclass(frozen=True)
class CleanDocument:
    name: str
    text: str
    ids: tuple[str, ...]


# 2-4 integer fields, matched on token boundaries so that 3.2.1 never
# matches inside 3.2.11 or 13.2.1
_ID_BODY = r"\d+(?:\.\d+){1,3}"
ID_PATTERN = re.compile(rf"(?<![\w.])({_ID_BODY})(?![\w]|\.\d)")
_DECLARATION = re.compile(rf"^({_ID_BODY})(?:[ \t]+|$)")
_SECTION_BREAK = re.compile(r"^(?:#+\s.*|[=\-_*~]{3,}\s*|\f.*)$")
URL_PATTERN = re.compile(r"(?:\b[A-Za-z][A-Za-z0-9+.\-]*://|\bmailto:|\bwww\.)\S+")

CSV_HEADER = ("id", "text", "label")


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def is_requirement_id(token: str) -> bool:
    return re.fullmatch(_ID_BODY, token) is not None


# --------------------------------------------------------------------------
# classification datasets
# --------------------------------------------------------------------------

def load_classification_dataset(path: str | Path, *, require_labels: bool = True) -> list[Requirement]:
    """Read an ``id,text,label`` CSV into requirements, preserving row order.

    Raises :class:`IngestError` on a missing file, a malformed row (with its
    line number), an unknown label or an empty dataset.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"dataset not found: {path}")
    source = path.stem
    reqs: list[Requirement] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: no requirements found")
        if tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise IngestError(f"{path}: expected header 'id,text,label', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{line}: malformed row, expected 3 fields, got {len(row)}")
            rid, text, label = (c.strip() for c in row)
            text = normalize_whitespace(text)
            if not rid:
                raise IngestError(f"{path}:{line}: empty id")
            if not text:
                raise IngestError(f"{path}:{line}: empty requirement text")
            if rid in seen:
                raise IngestError(f"{path}:{line}: duplicate id {rid!r}")
            seen.add(rid)
            if label:
                try:
                    cls = ReqClass.parse(label)
                except IngestError as exc:
                    raise IngestError(f"{path}:{line}: {exc}") from None
            elif require_labels:
                raise IngestError(f"{path}:{line}: missing label")
            else:
                cls = None
            reqs.append(Requirement(rid, text, cls, source))
    if not reqs:
        raise IngestError(f"{path}: no requirements found")
    return reqs


def write_classification_dataset(reqs: Iterable[Requirement], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in reqs:
            writer.writerow([r.id, r.text, r.label.value if r.label else ""])


def label_counts(reqs: Iterable[Requirement]) -> dict[str, int]:
    counts = {"total": 0, "F": 0, "NF": 0, "unlabeled": 0}
    for r in reqs:
        counts["total"] += 1
        counts[r.label.value if r.label else "unlabeled"] += 1
    return counts


def strip_labels(reqs: Sequence[Requirement]) -> list[Requirement]:
    return [replace(r, label=None) for r in reqs]


# --------------------------------------------------------------------------
# SRS documents
# --------------------------------------------------------------------------

def _normalize_srs_text(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n").expandtabs(4)
    lines = []
    for line in text.split("\n"):
        line = line.rstrip()
        m = _DECLARATION.match(line)
        if m and line[m.end():]:
            line = f"{m.group(1)} {line[m.end():]}"
        lines.append(line)
    return "\n".join(lines).strip("\n") + "\n"


def parse_srs_text(text: str, name: str) -> SrsDocument:
    """Split normalized SRS text into id-led requirement blocks.

    A block starts at a line whose first token is a dotted id and runs until
    the next such line or a section break (markdown heading, ruler line or
    form feed). Text outside any block (title, headings) is kept only in
    ``raw_text``.
    """
    raw = _normalize_srs_text(text)
    blocks: list[tuple[str, int, list[str]]] = []
    current: tuple[str, int, list[str]] | None = None
    for lineno, line in enumerate(raw.split("\n"), start=1):
        m = _DECLARATION.match(line)
        if m:
            current = (m.group(1), lineno, [line[m.end():]])
            blocks.append(current)
        elif _SECTION_BREAK.match(line):
            current = None
        elif current is not None:
            current[2].append(line)
    if not blocks:
        raise IngestError(f"{name}: no ids found")

    first_seen: dict[str, int] = {}
    reqs = []
    for rid, lineno, body in blocks:
        if rid in first_seen:
            raise IngestError(f"{name}: duplicate id {rid} at lines {first_seen[rid]} and {lineno}")
        first_seen[rid] = lineno
        block_text = "\n".join(body).strip("\n")
        if not block_text.strip():
            raise IngestError(f"{name}:{lineno}: requirement {rid} has no text")
        reqs.append(Requirement(rid, block_text, None, name))
    return SrsDocument(name, tuple(reqs), raw)


def parse_srs(path: str | Path) -> SrsDocument:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"SRS document not found: {path}")
    name = path.name.split(".")[0].upper()
    return parse_srs_text(path.read_text(encoding="utf-8"), name)


def serialize_block(req: Requirement) -> str:
    return f"{req.id} {req.text}"


def find_id_references(text: str) -> list[str]:
    return ID_PATTERN.findall(text)


def extract_trace_ground_truth(doc: SrsDocument) -> TraceGroundTruth:
    known = set(doc.ids)
    links: dict[str, set[str]] = {}
    for r in doc.requirements:
        for q in set(find_id_references(r.text)):
            if q in known and q != r.id:
                links.setdefault(q, set()).add(r.id)
    return TraceGroundTruth({q: frozenset(v) for q, v in links.items()})


def _tidy(line: str) -> str:
    line = re.sub(r"\(\s*(?:[,;/]|and|or|\s)*\)", "", line)
    line = re.sub(r"[ ]{2,}", " ", line)
    line = re.sub(r" +([,.;:)])", r"\1", line)
    return line.rstrip()


def clean_document(doc: SrsDocument, truth: TraceGroundTruth) -> CleanDocument:
    """Remove cross-referenced ids and URL tokens from the document text.

    Declaration ids at the start of each block are kept, so the result still
    parses to the same requirement ids.
    """
    referenced = set(truth.links)
    out = []
    for line in doc.raw_text.split("\n"):
        m = _DECLARATION.match(line)
        head, body = (line[: m.end()], line[m.end():]) if m else ("", line)
        body = URL_PATTERN.sub("", body)
        body = ID_PATTERN.sub(lambda mm: "" if mm.group(1) in referenced else mm.group(1), body)
        if m:
            body = body.lstrip()
            out.append(_tidy(head + body) if body else head.rstrip())
        else:
            out.append(_tidy(body) if body != line else line)
    text = "\n".join(out)
    return CleanDocument(f"{doc.name} clean", text, doc.ids)


def parse_clean(clean: CleanDocument) -> SrsDocument:
    return parse_srs_text(clean.text, clean.name)


def prepare_document(path: str | Path) -> tuple[SrsDocument, TraceGroundTruth, CleanDocument]:
    doc = parse_srs(path)
    truth = extract_trace_ground_truth(doc)
    return doc, truth, clean_document(doc, truth)

"""Chat-completion backends.

``LiveBackend`` talks to an OpenAI-compatible HTTP endpoint. ``ReplayBackend``
serves stored transcripts from a fixtures directory, ``RecordingBackend``
writes them, and ``OracleBackend`` answers from ground truth for tests.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .ingest import ReqClass, SrsDocument, TraceGroundTruth
from .parse import is_clarifying_question
from .patterns import PromptPattern, RenderedPrompt, TaskKind

log = logging.getLogger(__name__)

ENV_URL = "REBENCH_API_URL"
ENV_KEY = "REBENCH_API_KEY"
DEFAULT_URL = "https://api.openai.com/v1/chat/completions"
TEMPERATURE_GRID = (0.0, 0.4, 1.0)
FOLLOWUP_TEXT = "Proceed with your best interpretation and provide the final answer now."


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    pass


class FixtureMissing(BackendError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    model_name: str = "gpt-3.5-turbo"
    temperature: float = 0.4
    max_output_tokens: int = 1024
    request_timeout: float = 60.0
    max_retries: int = 3

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 1]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def with_temperature(self, t: float) -> "ModelConfig":
        return ModelConfig(self.model_name, t, self.max_output_tokens, self.request_timeout, self.max_retries)


@dataclass(frozen=True)
class FollowUpPolicy:
    max_followups: int = 1
    followup_text: str = FOLLOWUP_TEXT
    # override for the clarifying-question heuristic
    detector: Callable[[str, RenderedPrompt], bool] | None = None

    def __post_init__(self):
        if not 0 <= self.max_followups <= 5:
            raise ValueError("max_followups must be between 0 and 5")

    def is_question(self, text: str, prompt: RenderedPrompt) -> bool:
        return (self.detector or is_clarifying_question)(text, prompt)


@dataclass(frozen=True)
class RawResponse:
    text: str
    turns: tuple[tuple[str, str], ...]
    latency: float = 0.0
    truncated: bool = False
    attempts: tuple[dict, ...] = ()

    def __post_init__(self):
        if not self.turns:
            raise ValueError("a response needs at least one turn")

    @property
    def followups(self) -> int:
        return sum(1 for role, _ in self.turns if role == "user") - 1

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "turns": [list(t) for t in self.turns],
            "latency": self.latency,
            "truncated": self.truncated,
            "attempts": list(self.attempts),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RawResponse":
        return cls(d["text"], tuple((r, t) for r, t in d["turns"]), float(d.get("latency", 0.0)),
                   bool(d.get("truncated", False)), tuple(d.get("attempts", ())))


@dataclass(frozen=True)
class ChatReply:
    text: str
    truncated: bool = False
    attempts: tuple[dict, ...] = ()


def fixture_key(prompt: RenderedPrompt, temperature: float, repetition: int) -> str:
    payload = json.dumps(
        [prompt.pattern_name, prompt.task.value, f"{temperature:.2f}", list(prompt.payload_ids), repetition],
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


class Backend:
    """Base class; subclasses implement :meth:`chat` for a message list."""

    deterministic = False

    def chat(self, messages: list[dict], config: ModelConfig, prompt: RenderedPrompt) -> ChatReply:
        raise NotImplementedError

    def complete(self, prompt: RenderedPrompt, config: ModelConfig,
                 policy: FollowUpPolicy = FollowUpPolicy(), *, repetition: int = 0) -> RawResponse:
        messages = [{"role": "user", "content": prompt.text}]
        start = time.perf_counter()
        attempts: list[dict] = []
        truncated = False
        followups = 0
        while True:
            reply = self.chat(messages, config, prompt)
            attempts.extend(reply.attempts)
            truncated = truncated or reply.truncated
            messages.append({"role": "assistant", "content": reply.text})
            if followups >= policy.max_followups or not policy.is_question(reply.text, prompt):
                break
            followups += 1
            messages.append({"role": "user", "content": policy.followup_text})
        latency = 0.0 if self.deterministic else round(time.perf_counter() - start, 3)
        return RawResponse(reply.text, tuple((m["role"], m["content"]) for m in messages),
                           latency, truncated, tuple(attempts))


class LiveBackend(Backend):
    """OpenAI-compatible chat-completions client with exponential backoff."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(self, url: str | None = None, api_key: str | None = None, *,
                 transport: httpx.BaseTransport | None = None, backoff: float = 1.0,
                 sleep: Callable[[float], None] = time.sleep):
        self.url = url or os.environ.get(ENV_URL, DEFAULT_URL)
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.backoff = backoff
        self.sleep = sleep
        self._client = httpx.Client(transport=transport)

    def close(self):
        self._client.close()

    def _redacted(self, headers: Mapping[str, str]) -> dict:
        return {k: ("Bearer ***" if k.lower() == "authorization" else v) for k, v in headers.items()}

    def chat(self, messages, config, prompt):
        body = {
            "model": config.model_name,
            "messages": messages,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        attempts = []
        last_error = "no attempt made"
        for attempt in range(config.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            log.debug("POST %s headers=%s body=%s", self.url, self._redacted(headers), json.dumps(body))
            try:
                resp = self._client.post(self.url, json=body, headers=headers, timeout=config.request_timeout)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
            except httpx.TransportError as exc:
                last_error = f"transport: {exc}"
            else:
                log.debug("response %s %s", resp.status_code, resp.text)
                if resp.status_code == 200:
                    attempts.append({"attempt": attempt + 1, "status": 200})
                    data = resp.json()
                    choice = data["choices"][0]
                    text = choice["message"].get("content") or ""
                    return ChatReply(text, choice.get("finish_reason") == "length", tuple(attempts))
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in self.RETRY_STATUS:
                    attempts.append({"attempt": attempt + 1, "error": last_error})
                    raise BackendError(last_error)
            attempts.append({"attempt": attempt + 1, "error": last_error})
            log.warning("attempt %d/%d failed: %s", attempt + 1, config.max_retries + 1, last_error)
        err = TransportError(f"giving up after {len(attempts)} attempts: {last_error}")
        err.attempts = tuple(attempts)
        raise err


class ReplayBackend(Backend):
    """Serves stored responses keyed by :func:`fixture_key`."""

    deterministic = True

    def __init__(self, fixtures_dir: str | Path):
        self.dir = Path(fixtures_dir)

    def path_for(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def complete(self, prompt, config, policy=FollowUpPolicy(), *, repetition=0):
        key = fixture_key(prompt, config.temperature, repetition)
        path = self.path_for(key)
        if not path.is_file():
            raise FixtureMissing(f"no fixture {key} for {prompt.pattern_name}/{prompt.task.value} "
                                 f"t={config.temperature} rep={repetition}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return RawResponse.from_dict(data["response"])


class RecordingBackend(Backend):
    """Wraps another backend and stores every completion as a fixture."""

    def __init__(self, inner: Backend, fixtures_dir: str | Path):
        self.inner = inner
        self.dir = Path(fixtures_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.deterministic = inner.deterministic

    def complete(self, prompt, config, policy=FollowUpPolicy(), *, repetition=0):
        resp = self.inner.complete(prompt, config, policy, repetition=repetition)
        key = fixture_key(prompt, config.temperature, repetition)
        doc = {
            "key": key,
            "pattern": prompt.pattern_name,
            "task": prompt.task.value,
            "temperature": config.temperature,
            "payload_ids": list(prompt.payload_ids),
            "repetition": repetition,
            "response": resp.to_dict(),
        }
        (self.dir / f"{key}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return resp


class OracleBackend(Backend):
    """Answers from ground truth.

    Modes: ``perfect`` returns exactly the truth, ``empty`` returns no
    positives and ``inverted`` returns the complement of the truth within the
    candidate universe.
    """

    deterministic = True
    MODES = ("perfect", "empty", "inverted")

    def __init__(self, mode: str, classes: Mapping[str, ReqClass] | None = None,
                 documents: Sequence[tuple[SrsDocument, TraceGroundTruth]] = ()):
        if mode not in self.MODES:
            raise ValueError(f"unknown oracle mode {mode!r}")
        self.mode = mode
        self.classes = dict(classes or {})
        self.documents = {doc.name: (doc, truth) for doc, truth in documents}
        self._lock = threading.Lock()
        self.calls = 0

    def _classification(self, prompt: RenderedPrompt) -> str:
        ids = list(prompt.payload_ids)
        nf = {i for i in ids if self.classes[i] is ReqClass.NF}
        if self.mode == "empty":
            positives = set()
        elif self.mode == "inverted":
            positives = set(ids) - nf
        else:
            positives = nf
        if prompt.pattern_name == PromptPattern.TEMPLATE.value:
            listed = " ".join(f"(ID={i})" for i in ids if i in positives)
            return listed or "None of the listed requirements are non-functional."
        return "\n".join(f"{i}: {'NF' if i in positives else 'F'}" for i in ids)

    def _trace(self, prompt: RenderedPrompt) -> str:
        query = prompt.payload_ids[0]
        name = prompt.document.removesuffix(" clean") if prompt.document else None
        if name not in self.documents:
            raise BackendError(f"oracle has no document {prompt.document!r}")
        doc, truth = self.documents[name]
        linked = truth.for_query(query)
        universe = set(doc.ids) - {query}
        if self.mode == "empty":
            answer: set[str] = set()
        elif self.mode == "inverted":
            answer = universe - linked
        else:
            answer = set(linked)
        order = [i for i in doc.ids if i in answer]
        return "ID list: " + "; ".join(order)

    def chat(self, messages, config, prompt):
        with self._lock:
            self.calls += 1
        if prompt.task is TaskKind.CLASSIFICATION:
            return ChatReply(self._classification(prompt))
        return ChatReply(self._trace(prompt))


def make_oracle_backend(truth, mode: str = "perfect") -> OracleBackend:
    """Build an oracle from classification labels or (document, links) pairs."""
    if isinstance(truth, Mapping):
        return OracleBackend(mode, classes=truth)
    return OracleBackend(mode, documents=list(truth))

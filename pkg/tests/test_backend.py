import json

import httpx
import pytest

from rebench.backend import (
    FOLLOWUP_TEXT, Backend, BackendError, ChatReply, FixtureMissing, FollowUpPolicy, LiveBackend, ModelConfig,
    RawResponse, RecordingBackend, ReplayBackend, TransportError, fixture_key, make_oracle_backend,
)
from rebench.ingest import Requirement, ReqClass
from rebench.parse import parse_classification, parse_trace
from rebench.patterns import PromptPattern, render_classification_prompt, render_trace_prompt

REQS = [Requirement("1", "The system shall log in users."), Requirement("2", "The system shall be fast.")]
CLASSES = {"1": ReqClass.F, "2": ReqClass.NF}


def prompt(pattern=PromptPattern.PERSONA):
    return render_classification_prompt(pattern, REQS)


class Scripted(Backend):
    deterministic = True

    def __init__(self, replies):
        self.replies = list(replies)
        self.seen = []

    def chat(self, messages, config, prompt):
        self.seen.append([dict(m) for m in messages])
        return ChatReply(self.replies.pop(0))


def ok_body(text="1: F\n2: NF", finish="stop"):
    return {"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": finish}]}


class TestModelConfig:
    @pytest.mark.parametrize("t", [-0.1, 1.01])
    def test_temperature_range(self, t):
        with pytest.raises(ValueError):
            ModelConfig(temperature=t)

    def test_with_temperature(self):
        assert ModelConfig(max_retries=1).with_temperature(1.0) == ModelConfig(temperature=1.0, max_retries=1)


class TestFollowUp:
    def test_question_triggers_one_followup(self):
        b = Scripted(["Should I first list the actors?", "1: F\n2: NF"])
        resp = b.complete(prompt(PromptPattern.COGNITIVE_VERIFIER), ModelConfig())
        assert resp.followups == 1
        assert resp.turns[2] == ("user", FOLLOWUP_TEXT)
        assert resp.text == "1: F\n2: NF"
        assert len(b.seen[1]) == 3

    def test_at_most_one_followup(self):
        b = Scripted(["Which ones?", "Really, which ones?", "unused"])
        resp = b.complete(prompt(), ModelConfig())
        assert resp.followups == 1 and resp.text == "Really, which ones?"
        assert b.replies == ["unused"]

    def test_no_followup_for_answers(self):
        resp = Scripted(["1: F\n2: NF"]).complete(prompt(), ModelConfig())
        assert resp.followups == 0 and len(resp.turns) == 2

    def test_disabled(self):
        resp = Scripted(["Which ones?"]).complete(prompt(), ModelConfig(), FollowUpPolicy(max_followups=0))
        assert resp.followups == 0

    def test_custom_detector(self):
        policy = FollowUpPolicy(detector=lambda text, p: text.startswith("?"))
        resp = Scripted(["? hmm", "1: NF"]).complete(prompt(), ModelConfig(), policy)
        assert resp.followups == 1

    def test_raw_response_round_trip(self):
        resp = Scripted(["Which?", "2: NF"]).complete(prompt(), ModelConfig())
        assert RawResponse.from_dict(json.loads(json.dumps(resp.to_dict()))) == resp


class TestLive:
    def make(self, handler, **kw):
        sleeps = []
        b = LiveBackend("http://model.test/v1/chat", "sk-secret", transport=httpx.MockTransport(handler),
                        backoff=0.5, sleep=sleeps.append, **kw)
        return b, sleeps

    @pytest.mark.parametrize("t", [0.0, 0.4, 1.0])
    def test_temperature_forwarded_verbatim(self, t):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            assert request.headers["authorization"] == "Bearer sk-secret"
            return httpx.Response(200, json=ok_body())

        b, _ = self.make(handler)
        resp = b.complete(prompt(), ModelConfig(temperature=t, max_output_tokens=77))
        assert resp.text == "1: F\n2: NF"
        assert bodies[0]["temperature"] == t and type(bodies[0]["temperature"]) is float
        assert bodies[0]["max_tokens"] == 77
        assert bodies[0]["messages"] == [{"role": "user", "content": prompt().text}]

    def test_retry_then_success_with_backoff(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) < 3:
                return httpx.Response(503, text="busy")
            return httpx.Response(200, json=ok_body())

        b, sleeps = self.make(handler)
        resp = b.complete(prompt(), ModelConfig(max_retries=3))
        assert len(calls) == 3
        assert sleeps == [0.5, 1.0]
        assert [a.get("status") for a in resp.attempts] == [None, None, 200]

    def test_retries_bounded(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(429, text="slow down")

        b, sleeps = self.make(handler)
        with pytest.raises(TransportError) as info:
            b.complete(prompt(), ModelConfig(max_retries=2))
        assert len(calls) == 3
        assert sleeps == [0.5, 1.0]
        assert len(info.value.attempts) == 3

    def test_non_retryable_status(self):
        b, sleeps = self.make(lambda r: httpx.Response(401, text="bad key"))
        with pytest.raises(BackendError, match="401"):
            b.complete(prompt(), ModelConfig())
        assert sleeps == []

    def test_connection_error(self):
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        b, _ = self.make(handler)
        with pytest.raises(TransportError, match="giving up after 2 attempts"):
            b.complete(prompt(), ModelConfig(max_retries=1))

    def test_unreachable_host(self):
        b = LiveBackend("http://127.0.0.1:9/v1/chat", "k", sleep=lambda s: None)
        with pytest.raises(TransportError):
            b.complete(prompt(), ModelConfig(max_retries=0, request_timeout=2.0))

    def test_truncation_flag(self):
        b, _ = self.make(lambda r: httpx.Response(200, json=ok_body("1: F", finish="length")))
        assert b.complete(prompt(), ModelConfig()).truncated

    def test_key_not_logged(self, caplog):
        b, _ = self.make(lambda r: httpx.Response(200, json=ok_body()))
        with caplog.at_level("DEBUG", logger="rebench.backend"):
            b.complete(prompt(), ModelConfig())
        assert "sk-secret" not in caplog.text

    def test_env_configuration(self, monkeypatch):
        monkeypatch.setenv("REBENCH_API_URL", "http://env.test/x")
        monkeypatch.setenv("REBENCH_API_KEY", "envkey")
        b = LiveBackend()
        assert (b.url, b.api_key) == ("http://env.test/x", "envkey")


class TestReplay:
    def test_record_then_replay_identical(self, tmp_path):
        rec = RecordingBackend(Scripted(["Which?", "2: NF"]), tmp_path)
        cfg = ModelConfig(temperature=0.4)
        original = rec.complete(prompt(), cfg, repetition=3)
        replay = ReplayBackend(tmp_path)
        again = replay.complete(prompt(), cfg, repetition=3)
        assert again == original
        assert json.dumps(again.to_dict()) == json.dumps(original.to_dict())
        stored = json.loads((tmp_path / f"{fixture_key(prompt(), 0.4, 3)}.json").read_text())
        assert stored["payload_ids"] == ["1", "2"] and stored["repetition"] == 3

    def test_missing_fixture(self, tmp_path):
        with pytest.raises(FixtureMissing):
            ReplayBackend(tmp_path).complete(prompt(), ModelConfig(), repetition=0)

    def test_key_distinguishes_inputs(self):
        keys = {fixture_key(prompt(p), t, r) for p in PromptPattern for t in (0.0, 0.4, 1.0) for r in range(3)}
        assert len(keys) == 5 * 3 * 3


class TestOracle:
    @pytest.mark.parametrize("pattern", list(PromptPattern))
    def test_classification_modes(self, pattern):
        p = prompt(pattern)
        for mode, nf in [("perfect", {"2"}), ("empty", set()), ("inverted", {"1"})]:
            resp = make_oracle_backend(CLASSES, mode).complete(p, ModelConfig())
            labels = parse_classification(resp, p.payload_ids, pattern).labels
            assert {i for i in ("1", "2") if labels.get(i) is ReqClass.NF} == nf

    def test_trace_modes(self, themas):
        doc, truth, clean = themas
        q = next(iter(truth.links))
        p = render_trace_prompt(PromptPattern.TEMPLATE, doc.get(q), clean)
        universe = set(doc.ids) - {q}
        got = {}
        for mode in ("perfect", "empty", "inverted"):
            resp = make_oracle_backend([(doc, truth)], mode).complete(p, ModelConfig())
            got[mode] = parse_trace(resp, q, doc.ids).linked_ids
        assert got["perfect"] == truth.links[q]
        assert got["empty"] == frozenset()
        assert got["inverted"] == universe - truth.links[q]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            make_oracle_backend(CLASSES, "psychic")

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
import requests
from hypothesis import given, settings, strategies as st

from tslm.datagen import CaptionedPair, GenerationQuery, generate_dataset, make_synth_dataset
from tslm.errors import ParseError, ProtocolError, TransportError
from tslm.llm_client import (
    SUMMARY_CLOSING,
    SUMMARY_OPENING,
    ChatRequest,
    LLMClient,
    chat_complete,
    fallback_summary,
    generation_messages,
    parse_generated_pairs,
    summarize_captions,
    summary_prompt,
)
from tslm.textrep import phase_tag


class EchoHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append((body, self.headers.get("Authorization")))
        reply = json.dumps({"choices": [{"message": {"role": "assistant", "content": "ok"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


@pytest.fixture
def echo_server():
    server = HTTPServer(("127.0.0.1", 0), EchoHandler)
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


class FakeResponse:
    def __init__(self, status, body=None):
        self.status_code = status
        self._body = body

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


class FakeSession:
    def __init__(self, *responses):
        self.responses = list(responses)
        self.calls = 0

    def post(self, *args, **kwargs):
        self.calls += 1
        r = self.responses[min(self.calls - 1, len(self.responses) - 1)]
        if isinstance(r, Exception):
            raise r
        return r


def request(**kw):
    return ChatRequest("http://stub", "m", [{"role": "user", "content": "hi"}], backoff=0.0, **kw)


def test_round_trip_against_echo_server(echo_server):
    url = f"http://127.0.0.1:{echo_server.server_port}/v1/chat/completions"
    req = ChatRequest(url, "tiny", [{"role": "user", "content": "ping"}], temperature=0.7, timeout=5)
    assert chat_complete(req, token="abc") == "ok"
    body, auth = echo_server.seen[0]
    assert body == {"model": "tiny", "messages": [{"role": "user", "content": "ping"}], "temperature": 0.7}
    assert auth == "Bearer abc"


def test_server_errors_exhaust_retries():
    session = FakeSession(FakeResponse(500))
    with pytest.raises(TransportError):
        chat_complete(request(retries=2), session)
    assert session.calls == 3


def test_transport_exception_then_success():
    ok = FakeResponse(200, {"choices": [{"message": {"content": "fine"}}]})
    session = FakeSession(requests.ConnectionError("refused"), FakeResponse(429), ok)
    assert chat_complete(request(retries=3), session) == "fine"
    assert session.calls == 3


def test_client_error_is_not_retried():
    session = FakeSession(FakeResponse(401))
    with pytest.raises(TransportError):
        chat_complete(request(retries=3), session)
    assert session.calls == 1


@pytest.mark.parametrize("body", [{"choices": [{"message": {}}]}, {"choices": []}, ValueError("not json"), {"choices": [{"message": {"content": 3}}]}])
def test_malformed_reply_is_protocol_error(body):
    with pytest.raises(ProtocolError):
        chat_complete(request(), FakeSession(FakeResponse(200, body)))


def test_request_validation():
    with pytest.raises(ValueError):
        request(temperature=-0.1)
    with pytest.raises(ValueError):
        request(retries=-1)


BLOCK = "<start> 10 12 14 </start> <middle> 20 30 40 </middle> <end> 50 52 55 </end>"


def test_parse_one_and_three_blocks():
    pairs = parse_generated_pairs(f"{BLOCK}\nCaption: increases in the middle\n")
    assert len(pairs) == 1
    assert pairs[0].series == (10, 12, 14, 20, 30, 40, 50, 52, 55) and pairs[0].caption == "increases in the middle"
    text = "\n\n".join(f"{i + 1}. {BLOCK}\n{c}" for i, c in enumerate(["rises midway", "goes up", "climbs"]))
    assert [p.caption for p in parse_generated_pairs(text)] == ["rises midway", "goes up", "climbs"]


def test_out_of_bounds_block_rejected():
    bad = BLOCK.replace("55", "150")
    assert len(parse_generated_pairs(f"{bad}\nCaption: x\n{BLOCK}\nCaption: y")) == 1
    with pytest.raises(ParseError):
        parse_generated_pairs(f"{bad}\nCaption: x")
    with pytest.raises(ParseError):
        parse_generated_pairs("no tagged series here")


@settings(max_examples=40, deadline=None)
@given(st.text(alphabet="<>/startmidlen 0123456789.-\nCaption:", max_size=200))
def test_parser_never_emits_invalid_pairs(text):
    try:
        pairs = parse_generated_pairs(text)
    except ParseError:
        return
    for p in pairs:
        assert p.caption.strip() and all(0 < v < 100 for v in p.series)


def test_prompts():
    prompt = summary_prompt(["a", "b"])
    assert prompt.startswith(SUMMARY_OPENING)
    assert prompt.rstrip().endswith(SUMMARY_CLOSING + ".")
    assert prompt.index("- a") < prompt.index("- b")
    demo = make_synth_dataset(1, 0)[0]
    msgs = generation_messages(GenerationQuery([demo], 3))
    assert phase_tag(demo.series) in msgs[0]["content"] and demo.caption in msgs[0]["content"]


def test_fallback_examples():
    caps = ["increases in the middle", "increases in the middle", "flat at the start"]
    assert fallback_summary(caps) == "increases in the middle and flat at the start"
    assert summarize_captions(["rises at the end"]) == "rises at the end"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["rises early", "falls late", "goes up midway", "drops"]), min_size=1, max_size=6))
def test_fallback_uses_only_input_clauses(caps):
    out = fallback_summary(caps)
    assert set(out.split(" and ")) == set(caps)


def test_remote_summary_and_fallback_on_failure():
    ok = FakeSession(FakeResponse(200, {"choices": [{"message": {"content": " A rising series. "}}]}))
    client = LLMClient("http://stub", "m", session=ok)
    assert summarize_captions(["x", "y"], "remote", client) == "A rising series."
    down = LLMClient("http://stub", "m", retries=0, session=FakeSession(FakeResponse(503)))
    assert summarize_captions(["x", "x", "y"], "remote", down) == "x and y"


def test_remote_generation_backend_feeds_datagen():
    reply = "\n".join(f"{BLOCK}\nCaption: increases in the middle" for _ in range(3))
    client = LLMClient("http://stub", "m", session=FakeSession(FakeResponse(200, {"choices": [{"message": {"content": reply}}]})))
    out = generate_dataset(make_synth_dataset(4, 0), 6, backend="remote", client=client)
    assert len(out) == 6 and all(isinstance(p, CaptionedPair) and p.source == "generated" for p in out)


def test_from_env(monkeypatch):
    monkeypatch.setenv("TSLM_LLM_ENDPOINT", "http://e")
    monkeypatch.setenv("TSLM_LLM_MODEL", "mm")
    client = LLMClient.from_env()
    assert (client.endpoint, client.model) == ("http://e", "mm")
    monkeypatch.delenv("TSLM_LLM_MODEL")
    with pytest.raises(ValueError):
        LLMClient.from_env()

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest

from queryforge.errors import ConfigError, ProviderError, ScriptExhausted, TransportError
from queryforge.generator import (
    HttpProvider, ProviderConfig, ScriptedProvider, make_provider, read_transcript, transcript_record,
)
from queryforge.resources import SCRIPTED_CONFIG, TRANSCRIPTS_DIR

MESSAGES = [("system", "s"), ("user", "u")]


def write_transcript(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for key, text in entries:
            fh.write(json.dumps(transcript_record(key, MESSAGES, text)) + "\n")
    return path


def test_scripted_returns_exact_text(tmp_path):
    reply = "```\ncpg.call\n```\n  trailing  "
    path = write_transcript(tmp_path / "t.jsonl", [(("ex1", 1), reply), (("ex1", 2), "second")])
    p = ScriptedProvider(ProviderConfig(mode="scripted", transcript=path))
    assert p.complete(MESSAGES, ("ex1", 1)) == reply
    assert p.complete(MESSAGES, ("ex1", 2)) == "second"
    with pytest.raises(ScriptExhausted):
        p.complete(MESSAGES, ("ex1", 3))
    assert len(p.records) == 2


def test_transcript_first_record_wins_and_malformed_lines_fail(tmp_path):
    path = write_transcript(tmp_path / "t.jsonl", [(("a", 1), "first"), (("a", 1), "second")])
    assert read_transcript(path) == {("a", 1): "first"}
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"key": {"example_id": "a"}}\n')
    with pytest.raises(ConfigError, match="bad.jsonl:1"):
        read_transcript(bad)


def test_shipped_transcripts_parse():
    for path in sorted(TRANSCRIPTS_DIR.glob("*.jsonl")):
        assert read_transcript(path), path.name


def test_config_from_shipped_toml():
    cfg = ProviderConfig.from_toml(SCRIPTED_CONFIG)
    assert cfg.mode == "scripted" and cfg.transcript.is_file()
    assert isinstance(make_provider(cfg), ScriptedProvider)


@pytest.mark.parametrize("data, message", [
    ({"mode": "scripted"}, "transcript"),
    ({"mode": "http", "endpoint": "http://x"}, "endpoint and model"),
    ({"mode": "carrier-pigeon"}, "unknown provider mode"),
    ({"mode": "http", "endpoint": "http://x", "model": "m", "shoe_size": 9}, "unknown provider setting"),
    ({"mode": "http", "endpoint": "http://x", "model": "m", "retries": 0}, "at least 1"),
])
def test_config_errors(data, message):
    with pytest.raises(ConfigError, match=message):
        ProviderConfig.from_mapping(data)


def test_unreadable_toml_is_config_error(tmp_path):
    (tmp_path / "p.toml").write_text("[provider\n")
    with pytest.raises(ConfigError):
        ProviderConfig.from_toml(tmp_path / "p.toml")


def _completion(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def _http(handler, **kw):
    cfg = ProviderConfig(mode="http", endpoint="http://model.test/v1/chat/completions", model="m",
                         backoff=0.01, **kw)
    sleeps = []
    return HttpProvider(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append), sleeps


def test_http_retries_then_succeeds(monkeypatch):
    monkeypatch.setenv("QUERYFORGE_API_KEY", "sekrit")
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) == 1:
            raise httpx.ConnectError("refused", request=request)
        if len(calls) == 2:
            return httpx.Response(503)
        return _completion("ok")

    p, sleeps = _http(handler)
    assert p.complete(MESSAGES, ("e", 1)) == "ok"
    assert len(calls) == 3 and sleeps == [0.01, 0.02]
    body = json.loads(calls[-1].content)
    assert body["model"] == "m" and body["max_tokens"] == 10000
    assert body["messages"] == [{"role": "system", "content": "s"}, {"role": "user", "content": "u"}]
    assert calls[-1].headers["authorization"] == "Bearer sekrit"


def test_http_client_error_is_not_retried():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(401, text="no key")

    p, _ = _http(handler)
    with pytest.raises(TransportError, match="401"):
        p.complete(MESSAGES, ("e", 1))
    assert len(calls) == 1


def test_http_gives_up_after_retries():
    p, sleeps = _http(lambda request: httpx.Response(429), retries=2)
    with pytest.raises(TransportError, match="after 2 attempts"):
        p.complete(MESSAGES, ("e", 1))
    assert len(sleeps) == 1


def test_http_bad_payload_is_provider_error():
    p, _ = _http(lambda request: httpx.Response(200, json={"nothing": []}))
    with pytest.raises(ProviderError):
        p.complete(MESSAGES, ("e", 1))


class _Echo(BaseHTTPRequestHandler):
    reply = "echo from the stub"

    def do_POST(self):  # noqa: N802 - http.server naming
        length = int(self.headers.get("Content-Length", 0))
        json.loads(self.rfile.read(length))
        body = json.dumps({"choices": [{"message": {"content": self.reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Echo)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()
    server.server_close()


def test_http_against_local_stub_records_transcript(stub_server, tmp_path):
    record = tmp_path / "recorded.jsonl"
    cfg = ProviderConfig(mode="http", endpoint=stub_server, model="stub", record_path=record, timeout=5)
    p = make_provider(cfg)
    try:
        assert p.complete(MESSAGES, ("ex1", 1)) == _Echo.reply
    finally:
        p.close()
    lines = record.read_text().splitlines()
    assert len(lines) == 1
    assert read_transcript(record) == {("ex1", 1): _Echo.reply}
    # the recorded file replays in scripted mode
    replay = ScriptedProvider(ProviderConfig(mode="scripted", transcript=record))
    assert replay.complete(MESSAGES, ("ex1", 1)) == _Echo.reply


def test_inflight_requests_are_bounded(tmp_path):
    path = write_transcript(tmp_path / "t.jsonl", [((f"e{i}", 1), str(i)) for i in range(8)])
    p = ScriptedProvider(ProviderConfig(mode="scripted", transcript=path, max_inflight=2))
    active, peak = [0], [0]
    lock = threading.Lock()
    inner = p._complete

    def slow(messages, key):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        threading.Event().wait(0.01)
        with lock:
            active[0] -= 1
        return inner(messages, key)

    p._complete = slow
    threads = [threading.Thread(target=p.complete, args=(MESSAGES, (f"e{i}", 1))) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2 and len(p.records) == 8

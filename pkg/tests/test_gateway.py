from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from intentclar.gateway import (
    CacheMiss,
    ChatRequest,
    Gateway,
    GatewayConfig,
    KeyMissing,
    Mode,
    Role,
    TransportError,
    cache_key,
    http_transport,
    prompt_digest,
    record_transport,
)

REQ = ChatRequest("You are a helpful assistant.", ((Role.USER, "Hello"),), 0.0, 16000, "gpt-4", {"stage": "test"})


def test_cache_key_pinned_vector():
    assert cache_key(REQ) == "77bfeaf159a091289de6a81151f9f514926a9f02e0fe0d5c664eaa8321ff4694"
    assert prompt_digest(REQ) == "38d668762e8ae20c33fd4e4d984c51c844025055a5db533b6b136571dc12bd02"


def test_cache_key_ignores_metadata_order_and_sees_prompt_changes():
    a = ChatRequest("s", (("User", "m"),), metadata={"a": 1, "b": 2})
    b = ChatRequest("s", (("User", "m"),), metadata={"b": 2, "a": 1})
    c = ChatRequest("s.", (("User", "m"),), metadata={"a": 1, "b": 2})
    assert cache_key(a) == cache_key(b) != cache_key(c)


def test_messages_must_alternate():
    with pytest.raises(ValueError):
        ChatRequest("s", (("Assistant", "x"),))
    with pytest.raises(ValueError):
        ChatRequest("s", (("User", "x"), ("User", "y")))


def test_mock_mode_is_deterministic_and_falls_back_to_canary():
    gw = Gateway(GatewayConfig(mode=Mode.MOCK), mock_table={prompt_digest(REQ): "hi"})
    assert gw.complete(REQ) == gw.complete(REQ) == "hi"
    other = ChatRequest("x", (("User", "ping"),))
    assert gw.complete(other).startswith("MOCK-ECHO[") and gw.complete(other).endswith("ping")


def test_replay_miss_names_the_hash(tmp_path):
    gw = Gateway(GatewayConfig(mode=Mode.REPLAY, cache_directory=tmp_path))
    with pytest.raises(CacheMiss, match=cache_key(REQ)):
        gw.complete(REQ)


def test_live_records_then_replay_returns_same(tmp_path):
    live = Gateway(GatewayConfig(mode=Mode.LIVE, cache_directory=tmp_path),
                   transport=record_transport(lambda r: "answer é"))
    assert live.complete(REQ) == "answer é"
    assert (tmp_path / f"{cache_key(REQ)}.txt").read_bytes() == "answer é".encode()
    assert json.loads((tmp_path / f"{cache_key(REQ)}.json").read_text())["request_digest"] == cache_key(REQ)
    replay = Gateway(GatewayConfig(mode=Mode.REPLAY, cache_directory=tmp_path))
    assert replay.complete(REQ) == "answer é"


def test_retry_with_backoff_then_success():
    calls, sleeps = [], []

    def flaky(req, cfg):
        calls.append(1)
        if len(calls) < 3:
            raise TransportError("503")
        return "ok"

    gw = Gateway(GatewayConfig(mode=Mode.LIVE, backoff=(0.5, 1.5)), transport=flaky, sleep=sleeps.append)
    assert gw.complete(REQ) == "ok"
    assert sleeps == [0.5, 1.5]


def test_retry_exhaustion_surfaces_transport_error():
    def down(req, cfg):
        raise TransportError("down")

    gw = Gateway(GatewayConfig(mode=Mode.LIVE, max_attempts=2), transport=down, sleep=lambda s: None)
    with pytest.raises(TransportError):
        gw.complete(REQ)


def test_max_in_flight_bounds_concurrency():
    live = 0
    peak = 0
    lock = threading.Lock()

    def slow(req, cfg):
        nonlocal live, peak
        with lock:
            live += 1
            peak = max(peak, live)
        time.sleep(0.02)
        with lock:
            live -= 1
        return "x"

    gw = Gateway(GatewayConfig(mode=Mode.LIVE, max_in_flight=2), transport=slow)
    reqs = [ChatRequest("s", (("User", str(i)),)) for i in range(8)]
    threads = [threading.Thread(target=gw.complete, args=(r,)) for r in reqs]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert 1 <= peak <= 2


class _Handler(BaseHTTPRequestHandler):
    statuses: list[int] = []
    seen: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append({"auth": self.headers.get("Authorization"), "body": body})
        status = type(self).statuses.pop(0) if type(self).statuses else 200
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        if self.path.endswith("/embeddings"):
            payload = {"data": [{"embedding": [1.0, 0.0]}, {"embedding": [1.0, 0.0]}]}
        else:
            payload = {"choices": [{"message": {"content": f"echo:{body['messages'][-1]['content']}"}}]}
        self.wfile.write(json.dumps(payload).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    _Handler.statuses, _Handler.seen = [], []
    yield f"http://127.0.0.1:{srv.server_port}"
    srv.shutdown()


def test_http_transport_round_trip_with_retry(server, monkeypatch):
    monkeypatch.setenv("TEST_KEY", "secret")
    _Handler.statuses = [429]
    cfg = GatewayConfig(mode=Mode.LIVE, endpoint_url=server + "/v1/chat", api_key_source="TEST_KEY")
    gw = Gateway(cfg, sleep=lambda s: None)
    assert gw.complete(REQ) == "echo:Hello"
    assert len(_Handler.seen) == 2
    sent = _Handler.seen[-1]
    assert sent["auth"] == "Bearer secret"
    assert sent["body"]["messages"][0] == {"role": "system", "content": REQ.system_prompt}


def test_http_transport_needs_key(server, monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY", raising=False)
    cfg = GatewayConfig(mode=Mode.LIVE, endpoint_url=server, api_key_source="NO_SUCH_KEY")
    with pytest.raises(KeyMissing):
        http_transport(REQ, cfg)


def test_embed_endpoint(server):
    gw = Gateway(GatewayConfig())
    assert gw.embed(["a", "b"], server + "/embeddings") == [[1.0, 0.0], [1.0, 0.0]]


def test_config_round_trip():
    cfg = GatewayConfig(mode="Replay", backoff=[1, 2])
    again = GatewayConfig.from_dict(cfg.to_dict())
    assert again.mode is Mode.REPLAY and again.backoff == (1.0, 2.0)

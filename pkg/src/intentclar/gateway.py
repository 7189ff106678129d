"""Single entry point for every model call: live HTTP, mock fixtures, replay.

This is the only module that performs network I/O (chat completions and the
optional embedding endpoint used for similarity scoring).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import requests

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Retryable transport failure; surfaced after the last attempt."""


class CacheMiss(KeyError):
    pass


class KeyMissing(RuntimeError):
    pass


class Role(str, Enum):
    USER = "User"
    ASSISTANT = "Assistant"


class Mode(str, Enum):
    LIVE = "Live"
    MOCK = "Mock"
    REPLAY = "Replay"


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    messages: tuple[tuple[Role, str], ...] = ()
    temperature: float = 0.0
    max_output_chars: int = 16000
    model_tag: str = "gpt-4"
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        msgs = tuple((Role(r), str(c)) for r, c in self.messages)
        object.__setattr__(self, "messages", msgs)
        for i, (role, _) in enumerate(msgs):
            want = Role.USER if i % 2 == 0 else Role.ASSISTANT
            if role is not want:
                raise ValueError("messages must alternate User/Assistant starting with User")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_chars <= 0:
            raise ValueError("max_output_chars must be positive")

    def followup(self, reply: str, message: str) -> "ChatRequest":
        """Extend the conversation with the model's reply and a new user message."""
        msgs = self.messages + ((Role.ASSISTANT, reply), (Role.USER, message))
        return ChatRequest(
            self.system_prompt, msgs, self.temperature, self.max_output_chars,
            self.model_tag, dict(self.metadata),
        )


def _digest(payload: Any) -> str:
    canon = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def cache_key(request: ChatRequest) -> str:
    """64-hex digest over a canonical serialization of the whole request."""
    return _digest(
        {
            "system_prompt": request.system_prompt,
            "messages": [[r.value, c] for r, c in request.messages],
            "sampling": {
                "temperature": request.temperature,
                "max_output_chars": request.max_output_chars,
            },
            "model_tag": request.model_tag,
            "metadata": request.metadata,
        }
    )


def prompt_digest(request: ChatRequest) -> str:
    """Digest of (system_prompt, messages) only; keys the mock fixture table."""
    return _digest(
        {
            "system_prompt": request.system_prompt,
            "messages": [[r.value, c] for r, c in request.messages],
        }
    )


@dataclass
class GatewayConfig:
    mode: Mode = Mode.MOCK
    endpoint_url: str | None = None
    api_key_source: str = "OPENAI_API_KEY"
    cache_directory: Path | None = None
    mock_table: Path | None = None
    max_in_flight: int = 4
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    timeout_s: float = 120.0
    model_tag: str = "gpt-4"
    temperature: float = 0.0
    max_output_chars: int = 16000

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)
        if self.cache_directory is not None:
            self.cache_directory = Path(self.cache_directory)
        if self.mock_table is not None:
            self.mock_table = Path(self.mock_table)
        self.backoff = tuple(float(b) for b in self.backoff)
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise ValueError("max_in_flight and max_attempts must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GatewayConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "endpoint_url": self.endpoint_url,
            "api_key_source": self.api_key_source,
            "cache_directory": str(self.cache_directory) if self.cache_directory else None,
            "mock_table": self.mock_table.name if self.mock_table else None,
            "max_in_flight": self.max_in_flight,
            "max_attempts": self.max_attempts,
            "backoff": list(self.backoff),
            "timeout_s": self.timeout_s,
            "model_tag": self.model_tag,
            "temperature": self.temperature,
            "max_output_chars": self.max_output_chars,
        }


Transport = Callable[[ChatRequest, GatewayConfig], str]


def http_transport(request: ChatRequest, config: GatewayConfig) -> str:
    """POST a chat-completion-style JSON request and return the text."""
    if not config.endpoint_url:
        raise ValueError("Live mode needs endpoint_url")
    key = os.environ.get(config.api_key_source)
    if not key:
        raise KeyMissing(f"environment variable {config.api_key_source} is not set")
    messages = [{"role": "system", "content": request.system_prompt}]
    messages += [{"role": r.value.lower(), "content": c} for r, c in request.messages]
    payload = {
        "model": request.model_tag,
        "messages": messages,
        "temperature": request.temperature,
    }
    try:
        resp = requests.post(
            config.endpoint_url,
            json=payload,
            headers={"Authorization": f"Bearer {key}"},
            timeout=config.timeout_s,
        )
    except requests.RequestException as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    if resp.status_code >= 400:
        raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    return _response_text(resp.json())


def _response_text(body: dict[str, Any]) -> str:
    if "choices" in body:
        choice = body["choices"][0]
        if "message" in choice:
            return choice["message"]["content"] or ""
        return choice.get("text", "")
    for k in ("content", "text", "output"):
        if isinstance(body.get(k), str):
            return body[k]
    raise TransportError("unrecognised response body")


def echo_canary(request: ChatRequest) -> str:
    last = request.messages[-1][1] if request.messages else ""
    return f"MOCK-ECHO[{prompt_digest(request)[:12]}] {last}"


class Gateway:
    """Pluggable completion service shared by every pipeline stage.

    Safe for concurrent use: in-flight live calls are bounded by
    ``max_in_flight`` and cache writes are serialized per key.
    """

    def __init__(
        self,
        config: GatewayConfig | None = None,
        transport: Transport | None = None,
        mock_table: dict[str, str] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config or GatewayConfig()
        self.transport = transport or http_transport
        self.sleep = sleep
        if mock_table is None and self.config.mock_table is not None:
            mock_table = json.loads(self.config.mock_table.read_text("utf-8"))
        self.mock_table = mock_table or {}
        self._slots = threading.BoundedSemaphore(self.config.max_in_flight)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self.calls = 0
        self.chars_out = 0

    def request(self, system_prompt: str, user_message: str, **metadata: Any) -> ChatRequest:
        cfg = self.config
        return ChatRequest(
            system_prompt,
            ((Role.USER, user_message),),
            cfg.temperature,
            cfg.max_output_chars,
            cfg.model_tag,
            metadata,
        )

    def complete(self, request: ChatRequest) -> str:
        mode = self.config.mode
        if mode is Mode.MOCK:
            text = self.mock_table.get(prompt_digest(request))
            return echo_canary(request) if text is None else text
        key = cache_key(request)
        cached = self._read_cache(key)
        if cached is not None:
            return cached
        if mode is Mode.REPLAY:
            raise CacheMiss(f"no cached response for request {key}")
        text = self._call_with_retry(request)[: request.max_output_chars]
        self._write_cache(key, text)
        return text

    def _call_with_retry(self, request: ChatRequest) -> str:
        attempts = self.config.max_attempts
        for attempt in range(attempts):
            try:
                with self._slots:
                    self.calls += 1
                    text = self.transport(request, self.config)
                self.chars_out += len(text)
                return text
            except TransportError as exc:
                if attempt + 1 >= attempts:
                    raise
                delay = self.config.backoff[min(attempt, len(self.config.backoff) - 1)] if self.config.backoff else 0
                log.warning("transport error (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")

    # -- on-disk cache: <dir>/<key>.txt body, <dir>/<key>.json sidecar

    def _lock(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _read_cache(self, key: str) -> str | None:
        d = self.config.cache_directory
        if d is None:
            return None
        path = d / f"{key}.txt"
        if not path.exists():
            return None
        return path.read_bytes().decode("utf-8")

    def _write_cache(self, key: str, text: str) -> None:
        d = self.config.cache_directory
        if d is None:
            return
        d.mkdir(parents=True, exist_ok=True)
        with self._lock(key):
            body = d / f"{key}.txt"
            tmp = d / f".{key}.{threading.get_ident()}.tmp"
            tmp.write_bytes(text.encode("utf-8"))
            os.replace(tmp, body)
            meta = {
                "request_digest": key,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "chars": len(text),
            }
            (d / f"{key}.json").write_text(json.dumps(meta), "utf-8")

    # -- embeddings for the similarity provider

    def embed(self, texts: list[str], endpoint: str, model: str | None = None) -> list[list[float]]:
        payload: dict[str, Any] = {"input": texts}
        if model:
            payload["model"] = model
        headers = {}
        key = os.environ.get(self.config.api_key_source)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last: Exception | None = None
        for attempt in range(self.config.max_attempts):
            try:
                resp = requests.post(endpoint, json=payload, headers=headers, timeout=self.config.timeout_s)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise TransportError(f"HTTP {resp.status_code}")
                resp.raise_for_status()
                body = resp.json()
                return [item["embedding"] for item in body["data"]]
            except (requests.RequestException, TransportError) as exc:
                last = exc
                if attempt + 1 < self.config.max_attempts and self.config.backoff:
                    self.sleep(self.config.backoff[min(attempt, len(self.config.backoff) - 1)])
        raise TransportError(f"embedding endpoint failed: {last}")


def complete(request: ChatRequest, config: GatewayConfig) -> str:
    return Gateway(config).complete(request)


def record_transport(responder: Callable[[ChatRequest], str]) -> Transport:
    """Adapt a plain ``request -> text`` function into a transport."""

    def _transport(request: ChatRequest, config: GatewayConfig) -> str:
        return responder(request)

    return _transport

"""Model providers: an HTTP chat-completion client and a transcript replayer.

Both append every exchange to an in-memory transcript (and optionally to a
JSONL file) in the same record format, so a recorded HTTP session can be
replayed by :class:`ScriptedProvider`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
import tomli

from ..errors import ConfigError, ProviderError, ScriptExhausted, TransportError

log = logging.getLogger(__name__)

Message = tuple[str, str]  # (role, text)
Key = tuple[str, int]  # (example id or stage key, attempt)

RETRY_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "scripted"  # http | scripted
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "QUERYFORGE_API_KEY"
    transcript: Path | None = None
    record_path: Path | None = None
    temperature: float = 0.2
    max_output_tokens: int = 10000
    max_inflight: int = 2
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5

    def validate(self) -> "ProviderConfig":
        if self.mode == "scripted":
            if self.transcript is None or not Path(self.transcript).is_file():
                raise ConfigError(f"scripted provider needs an existing transcript file, got {self.transcript}")
        elif self.mode == "http":
            if not self.endpoint or not self.model:
                raise ConfigError("http provider needs both endpoint and model")
        else:
            raise ConfigError(f"unknown provider mode {self.mode!r}")
        if self.max_inflight < 1 or self.retries < 1:
            raise ConfigError("max_inflight and retries must be at least 1")
        return self

    @classmethod
    def from_mapping(cls, data: dict, base_dir: str | Path = ".") -> "ProviderConfig":
        data = dict(data.get("provider", data))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown provider setting(s): {', '.join(sorted(unknown))}")
        for key in ("transcript", "record_path"):
            if data.get(key):
                data[key] = Path(base_dir) / data[key]
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path: str | Path) -> "ProviderConfig":
        path = Path(path)
        try:
            data = tomli.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read provider config {path}: {exc}") from exc
        return cls.from_mapping(data, path.parent)


def request_digest(messages: Sequence[Message]) -> str:
    blob = json.dumps([list(m) for m in messages], ensure_ascii=False).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def transcript_record(key: Key, messages: Sequence[Message], response: str) -> dict:
    return {"key": {"example_id": key[0], "attempt": key[1]},
            "request_digest": request_digest(messages), "response": response}


def read_transcript(path: str | Path) -> dict[Key, str]:
    """Map (example id, attempt) to the recorded response; first wins."""
    out: dict[Key, str] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["key"]["example_id"]), int(rec["key"]["attempt"]))
                response = rec["response"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{n}: malformed transcript record ({exc})") from exc
            out.setdefault(key, response)
    return out


class Provider:
    """Base class: records each exchange and bounds concurrent requests."""

    def __init__(self, cfg: ProviderConfig) -> None:
        self.cfg = cfg
        self.records: list[dict] = []
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(cfg.max_inflight)

    def complete(self, messages: Sequence[Message], key: Key) -> str:
        with self._slots:
            response = self._complete(list(messages), key)
        rec = transcript_record(key, messages, response)
        with self._lock:
            self.records.append(rec)
            if self.cfg.record_path is not None:
                with open(self.cfg.record_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return response

    def _complete(self, messages: list[Message], key: Key) -> str:  # pragma: no cover - abstract
        raise NotImplementedError

    def close(self) -> None:
        pass


class ScriptedProvider(Provider):
    def __init__(self, cfg: ProviderConfig) -> None:
        super().__init__(cfg)
        self.script = read_transcript(cfg.transcript)

    def _complete(self, messages: list[Message], key: Key) -> str:
        try:
            return self.script[key]
        except KeyError:
            raise ScriptExhausted(*key) from None


class HttpProvider(Provider):
    """Chat-completion client speaking the messages-in, choices-out contract."""

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep) -> None:
        super().__init__(cfg)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self._sleep = sleep

    def _complete(self, messages: list[Message], key: Key) -> str:
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": r, "content": t} for r, t in messages],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        last: Exception | None = None
        for attempt in range(self.cfg.retries):
            if attempt:
                self._sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.cfg.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = exc
                log.warning("request %s attempt %d failed: %s", key, attempt + 1, exc)
                continue
            if resp.status_code in RETRY_STATUS:
                last = ProviderError(f"HTTP {resp.status_code}")
                log.warning("request %s attempt %d got HTTP %d", key, attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"unexpected completion payload: {exc}") from exc
        raise TransportError(f"giving up after {self.cfg.retries} attempts: {last}")

    def close(self) -> None:
        self.client.close()


def make_provider(cfg: ProviderConfig, **kw) -> Provider:
    cfg.validate()
    if cfg.mode == "scripted":
        return ScriptedProvider(cfg)
    return HttpProvider(cfg, **kw)


__all__ = [
    "ProviderConfig", "Provider", "ScriptedProvider", "HttpProvider", "make_provider",
    "read_transcript", "request_digest", "transcript_record",
]

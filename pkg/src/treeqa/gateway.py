"""Chat and embedding backends over the OpenAI-compatible HTTP protocol.

Includes a disk response cache, retry/rate-limit machinery, and deterministic
offline mock backends used throughout the test suite.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import requests


class GatewayError(RuntimeError):
    """Raised when a backend call fails after the configured retries."""


@dataclass
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    chat_model: str = "gpt-3.5-turbo"
    embed_model: str = "text-embedding-ada-002"
    timeout: float = 60.0
    max_retries: int = 3
    rate_limit: int = 60  # requests per minute; 0 disables
    cache_dir: str | None = None
    embed_batch_size: int = 100

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class RateLimiter:
    """Sliding-window limiter; safe under concurrent use.

    The clock is injectable so the no-overrun property is testable
    without real sleeps.
    """

    def __init__(self, per_minute: int, clock=time.monotonic, sleep=time.sleep):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._stamps: list[float] = []

    def acquire(self) -> None:
        if self.per_minute <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._stamps = [t for t in self._stamps if now - t < 60.0]
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleep(max(wait, 0.01))


class ResponseCache:
    """Disk cache keyed by a digest of the full request payload.

    Hits are collision-checked against the stored request; a hit returns the
    stored response byte-identically.
    """

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(payload: dict) -> str:
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, payload: dict):
        path = os.path.join(self.directory, self.key(payload) + ".json")
        try:
            with open(path, encoding="utf-8") as fh:
                entry = json.load(fh)
        except (FileNotFoundError, json.JSONDecodeError):
            return None
        if entry.get("request") != payload:
            return None  # digest collision; treat as a miss
        return entry["response"]

    def put(self, payload: dict, response) -> None:
        path = os.path.join(self.directory, self.key(payload) + ".json")
        tmp = path + ".tmp"
        with self._lock:
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(
                    {"request": payload, "response": response, "created_at": time.time()},
                    fh,
                    ensure_ascii=False,
                )
            os.replace(tmp, path)


class OpenAIGateway:
    """Client for chat-completions and embeddings endpoints."""

    def __init__(self, config: ProviderConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.limiter = RateLimiter(config.rate_limit)
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None

    def _headers(self) -> dict:
        key = os.environ.get(self.config.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, endpoint: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + endpoint
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            self.limiter.acquire()
            try:
                resp = self.session.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
                if resp.status_code in (401, 403):
                    raise GatewayError(f"auth failure ({resp.status_code}) at {url}")
                if resp.status_code >= 400:
                    raise requests.HTTPError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except GatewayError:
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt < self.config.max_retries:
                    time.sleep(min(2.0 ** attempt, 30.0))
        raise GatewayError(f"request to {url} failed after retries: {last_error}")

    def chat(self, messages: list[dict], model: str | None = None, **params) -> str:
        model = model or self.config.chat_model
        payload = {"model": model, "messages": messages, **params}
        cacheable = self.cache is not None and params.get("temperature", 0) == 0
        if cacheable:
            hit = self.cache.get(payload)
            if hit is not None:
                return hit
        data = self._post("/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {data!r:.200}") from exc
        if cacheable:
            self.cache.put(payload, text)
        return text

    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        model = model or self.config.embed_model
        vectors: list[list[float] | None] = [None] * len(texts)
        pending: list[int] = []
        for i, text in enumerate(texts):
            payload = {"model": model, "input": [text]}
            hit = self.cache.get(payload) if self.cache else None
            if hit is not None:
                vectors[i] = hit
            else:
                pending.append(i)

        bs = self.config.embed_batch_size
        for start in range(0, len(pending), bs):
            idxs = pending[start : start + bs]
            payload = {"model": model, "input": [texts[i] for i in idxs]}
            data = self._post("/embeddings", payload)
            try:
                rows = sorted(data["data"], key=lambda r: r["index"])
                batch = [r["embedding"] for r in rows]
            except (KeyError, TypeError) as exc:
                raise GatewayError(f"malformed embedding response: {data!r:.200}") from exc
            if len(batch) != len(idxs):
                raise GatewayError("embedding response does not cover the batch")
            for i, vec in zip(idxs, batch):
                vectors[i] = vec
                if self.cache:
                    self.cache.put({"model": model, "input": [texts[i]]}, vec)

        dims = {len(v) for v in vectors}  # type: ignore[arg-type]
        if len(dims) > 1:
            raise GatewayError(f"embedding dimension drift across batches: {sorted(dims)}")
        return vectors  # type: ignore[return-value]


@dataclass
class CallEvent:
    kind: str  # request | response
    tag: str
    order: int


class MockChatGateway:
    """Deterministic chat backend for tests.

    ``reply_fn`` maps the message list to a completion; the default echoes
    the last user message. Every request/response is logged with a global
    ordering so tests can assert scheduling constraints.
    """

    def __init__(self, reply_fn=None, fail_on: set[str] | None = None):
        self.reply_fn = reply_fn or (lambda messages: messages[-1]["content"])
        self.fail_on = fail_on or set()
        self.events: list[CallEvent] = []
        self.calls = 0
        self._lock = threading.Lock()
        self._counter = 0

    def _log(self, kind: str, tag: str) -> None:
        with self._lock:
            self.events.append(CallEvent(kind=kind, tag=tag, order=self._counter))
            self._counter += 1

    def chat(self, messages: list[dict], model: str | None = None, **params) -> str:
        tag = messages[-1]["content"].splitlines()[0] if messages else ""
        self._log("request", tag)
        with self._lock:
            self.calls += 1
        for marker in self.fail_on:
            if any(marker in m["content"] for m in messages):
                raise GatewayError(f"injected failure on marker {marker!r}")
        out = self.reply_fn(messages)
        self._log("response", tag)
        return out


class HashedBowEmbedder:
    """Hashed bag-of-words embedding: per-token signed hashing into a fixed dim.

    Pure function of the input text; the offline stand-in for a dense encoder.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.embedder_id = f"mock-bow-{dim}"
        self.calls = 0
        self.batch_log: list[int] = []
        self._lock = threading.Lock()

    def _embed_one(self, text: str) -> list[float]:
        from .textutil import tokenize

        vec = [0.0] * self.dim
        for token in tokenize(text):
            digest = hashlib.md5(token.encode("utf-8")).digest()
            slot = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[slot] += sign
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            vec[0] = 1.0  # keep all-zero vectors out of cosine
            norm = 1.0
        return [v / norm for v in vec]

    def embed(self, texts: list[str], model: str | None = None) -> list[list[float]]:
        with self._lock:
            self.calls += 1
            self.batch_log.append(len(texts))
        return [self._embed_one(t) for t in texts]

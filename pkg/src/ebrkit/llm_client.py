"""OpenAI-compatible chat-completions client with retry and an on-disk cache.

Cache entries live at ``{cache_dir}/{key[:2]}/{key}.json`` where ``key`` is the
SHA-256 of the model name, prompt, temperature and max_tokens. Writes go
through a temp file and ``os.replace`` so concurrent writers are safe.
Prompt and response text are never logged.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import httpx

from ebrkit.rescaling import ScoringBackend

log = logging.getLogger(__name__)

SESSION_FILE = "last_session.json"


class BackendError(Exception):
    pass


class AuthenticationError(BackendError):
    pass


class RetriesExhausted(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4-0613"
    temperature: float = 0.0
    max_response_tokens: int = 256
    timeout: float = 60.0
    max_retries: int = 5
    concurrency_limit: int = 4
    cache_dir: str = ".ebrkit-cache"
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def replace(self, **changes) -> "BackendConfig":
        return dataclasses.replace(self, **changes)


def cache_key(model_name: str, prompt: str, temperature: float, max_tokens: int) -> str:
    payload = json.dumps(
        {"model": model_name, "prompt": prompt, "temperature": temperature, "max_tokens": max_tokens},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Directory of one JSON file per cache key, with session hit/miss counters."""

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[str]:
        p = self.path(key)
        try:
            entry = json.loads(p.read_text(encoding="utf-8"))
            text = entry["response_text"]
        except (FileNotFoundError, json.JSONDecodeError, KeyError):
            text = None
        with self._lock:
            if text is None:
                self.misses += 1
            else:
                self.hits += 1
        return text

    def put(self, key: str, response_text: str, model_name: str = "") -> None:
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "key": key,
            "model": model_name,
            "response_text": response_text,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(entry, f, ensure_ascii=False)
            os.replace(tmp, p)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def write_session(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / SESSION_FILE).write_text(
            json.dumps({"hits": self.hits, "misses": self.misses}), encoding="utf-8"
        )


def cache_stats(cache_dir, cache: Optional[ResponseCache] = None) -> dict:
    """Entry count and size on disk; hits/misses from ``cache`` or the last saved session."""
    root = Path(cache_dir)
    if root.exists() and not root.is_dir():
        raise NotADirectoryError(root)
    entries = 0
    size = 0
    if root.is_dir():
        for p in root.glob("??/*.json"):
            if p.name.startswith("."):
                continue
            entries += 1
            size += p.stat().st_size
    hits = misses = 0
    if cache is not None:
        hits, misses = cache.hits, cache.misses
    elif (root / SESSION_FILE).exists():
        session = json.loads((root / SESSION_FILE).read_text(encoding="utf-8"))
        hits, misses = session.get("hits", 0), session.get("misses", 0)
    return {"entries": entries, "hits": hits, "misses": misses, "bytes": size}


def _retryable(status: int) -> bool:
    return status == 429 or 500 <= status < 600


class ChatClient:
    """Single-message chat completions, cached, retried, and concurrency-limited.

    One client may be shared by many threads; at most
    ``config.concurrency_limit`` requests are in flight at any time.
    """

    def __init__(
        self,
        config: BackendConfig,
        cache: Optional[ResponseCache] = None,
        http: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
        _semaphore: Optional[threading.BoundedSemaphore] = None,
    ):
        self.config = config
        self.cache = cache if cache is not None else ResponseCache(config.cache_dir)
        self.http = http or httpx.Client(timeout=config.timeout)
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.semaphore = _semaphore or threading.BoundedSemaphore(config.concurrency_limit)
        self.requests_sent = 0
        self._count_lock = threading.Lock()

    def with_cache(self, cache: ResponseCache) -> "ChatClient":
        """Same transport and concurrency limit, different cache."""
        return ChatClient(self.config, cache, self.http, self.sleep, self.rng, self.semaphore)

    def close(self):
        self.http.close()

    def backoff_delay(self, attempt: int) -> float:
        # jitter factor in [1, 1.5) keeps successive delays strictly increasing
        return self.config.backoff_base * (2**attempt) * (1.0 + 0.5 * self.rng.random())

    def complete(self, prompt: str, read_cache: bool = True) -> str:
        cfg = self.config
        key = cache_key(cfg.model_name, prompt, cfg.temperature, cfg.max_response_tokens)
        if read_cache:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        api_key = os.environ.get(cfg.api_key_env)
        if not api_key:
            raise AuthenticationError(f"environment variable {cfg.api_key_env} is not set")
        text = self._request(prompt, api_key)
        self.cache.put(key, text, cfg.model_name)
        return text

    def _request(self, prompt: str, api_key: str) -> str:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_response_tokens,
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        last_error = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                delay = self.backoff_delay(attempt - 1)
                log.info("retrying chat completion in %.2fs (attempt %d)", delay, attempt + 1)
                self.sleep(delay)
            try:
                with self.semaphore:
                    with self._count_lock:
                        self.requests_sent += 1
                    resp = self.http.post(url, json=body, headers=headers, timeout=cfg.timeout)
            except (httpx.TimeoutException, httpx.TransportError) as e:
                last_error = f"{type(e).__name__}"
                continue
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"HTTP {resp.status_code} from {url}")
            if _retryable(resp.status_code):
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code} from {url}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise MalformedResponse(f"unexpected response body from {url}") from e
        raise RetriesExhausted(f"gave up after {cfg.max_retries + 1} attempts: {last_error}")


class LLMBackend(ScoringBackend):
    def __init__(self, client: ChatClient, read_cache: bool = True):
        self.client = client
        self.read_cache = read_cache
        self.id = f"openai-compatible:{client.config.model_name}"
        self.deterministic = client.config.temperature == 0

    @classmethod
    def from_config(cls, config: BackendConfig, **kwargs) -> "LLMBackend":
        return cls(ChatClient(config, **kwargs))

    def respond(self, prompt, judgment, rubric):
        return self.client.complete(prompt, read_cache=self.read_cache)

    def isolated(self, run_id: str) -> "LLMBackend":
        """Fresh requests for every prompt; replies kept in a run-scoped cache for audit."""
        run_cache = ResponseCache(self.client.cache.root / "runs" / run_id)
        return LLMBackend(self.client.with_cache(run_cache), read_cache=False)

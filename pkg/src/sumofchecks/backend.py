"""Model backends (remote chat APIs, scripted mock, rule oracle) behind one cached ``complete``."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

from .prompting import (
    SCHEMA_AGG,
    SCHEMA_CHECKS,
    SCHEMA_COT,
    SCHEMA_QA,
    SCHEMA_SCALAR,
    PromptPayload,
)

log = logging.getLogger(__name__)

BACKEND_KINDS = ("remote", "mock", "oracle")
DIALECTS = ("chat", "messages")
DEFAULT_ENDPOINTS = {
    "chat": "https://api.openai.com/v1/chat/completions",
    "messages": "https://api.anthropic.com/v1/messages",
}
DEFAULT_KEY_ENV = {"chat": "OPENAI_API_KEY", "messages": "ANTHROPIC_API_KEY"}


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    pass


class RateLimitedError(BackendError):
    pass


class TransportError(BackendError):
    pass


class OversizedPayloadError(BackendError):
    pass


class UnknownFrameError(BackendError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    backend_kind: str
    model_name: str
    endpoint: str | None = None
    dialect: str | None = None
    temperature: float = 0.1
    max_output_tokens: int = 1024
    run_index: int = 1
    api_key_env: str | None = None

    def __post_init__(self):
        if self.backend_kind not in BACKEND_KINDS:
            raise ValueError(f"backend_kind must be one of {BACKEND_KINDS}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.run_index < 1:
            raise ValueError("run_index must be >= 1")
        if self.backend_kind == "remote" and self.dialect not in DIALECTS:
            raise ValueError(f"remote backends need a dialect in {DIALECTS}")

    def public_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("run_index")
        return d


@dataclass
class ModelResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    from_cache: bool = False
    key: str = ""


def cache_key(payload: PromptPayload, config: ModelConfig) -> str:
    h = hashlib.sha256()
    head = json.dumps(
        {
            "model_name": config.model_name,
            "backend_kind": config.backend_kind,
            "temperature": config.temperature,
            "run_index": config.run_index,
        },
        sort_keys=True,
    )
    h.update(head.encode())
    h.update(b"\0")
    h.update(payload.canonical_bytes())
    for data, _ in payload.images:
        h.update(b"\0")
        h.update(data)
    return h.hexdigest()


class ResponseCache:
    """Content-addressed response store: one JSON file per key under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self.path(key)
        try:
            return json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            log.warning("ignoring corrupt cache entry %s", p)
            return None

    def put(self, key: str, request_digest: str, response: ModelResponse) -> None:
        entry = {
            "key": key,
            "request_digest": request_digest,
            "response_text": response.text,
            "input_tokens": response.input_tokens,
            "output_tokens": response.output_tokens,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, indent=2, ensure_ascii=False)
        # atomic; a concurrent writer of the same key just replaces identical content
        os.replace(tmp, self.path(key))

    def delete(self, key: str) -> bool:
        try:
            self.path(key).unlink()
            return True
        except FileNotFoundError:
            return False


class Backend:
    """Base backend: cache lookup, per-key single flight, and a call counter.

    Subclasses implement ``_invoke``; ``calls`` counts invocations that were not
    served from the cache.
    """

    def __init__(self, cache: ResponseCache | None = None):
        self.cache = cache
        self.calls = 0
        self._count_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._key_locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._key_locks_guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def complete(self, payload: PromptPayload, config: ModelConfig) -> ModelResponse:
        key = cache_key(payload, config)
        if self.cache is None:
            return self._call(payload, config, key)
        with self._lock_for(key):
            hit = self.cache.get(key)
            if hit is not None:
                return ModelResponse(
                    hit["response_text"],
                    hit.get("input_tokens", 0),
                    hit.get("output_tokens", 0),
                    0.0,
                    True,
                    key,
                )
            response = self._call(payload, config, key)
            self.cache.put(key, payload.digest(), response)
            return response

    def _call(self, payload: PromptPayload, config: ModelConfig, key: str) -> ModelResponse:
        with self._count_lock:
            self.calls += 1
        start = time.perf_counter()
        response = self._invoke(payload, config)
        response.latency = time.perf_counter() - start
        response.key = key
        response.from_cache = False
        return response

    def _invoke(self, payload: PromptPayload, config: ModelConfig) -> ModelResponse:
        raise NotImplementedError


def _approx_tokens(text: str) -> int:
    return len(text.split())


class MockBackend(Backend):
    """Returns scripted text: a list consumed in order (last item repeats) or a callable."""

    def __init__(
        self,
        script: Sequence[str] | Callable[[PromptPayload, ModelConfig], str],
        cache: ResponseCache | None = None,
    ):
        super().__init__(cache)
        self._script = script
        self._pos = 0
        self._lock = threading.Lock()

    def _invoke(self, payload: PromptPayload, config: ModelConfig) -> ModelResponse:
        if callable(self._script):
            text = self._script(payload, config)
        else:
            with self._lock:
                if not self._script:
                    raise BackendError("mock backend has an empty script")
                text = self._script[min(self._pos, len(self._script) - 1)]
                self._pos += 1
        return ModelResponse(text, _approx_tokens(payload.user_text), _approx_tokens(text))


# --- rule oracle ---------------------------------------------------------------


@dataclass
class Ruleset:
    """Scripted ground truth for the oracle backend.

    ``checks[frame_id][check_id]`` and ``confidence[frame_id][criterion_id]`` hold a
    value or a per-run list (indexed by run_index - 1, cycling). ``agg_scores``
    optionally pins LLM-aggregation answers; otherwise the oracle answers the
    fraction of affirmative verdicts shown in the prompt.
    """

    checks: dict[str, dict[str, Any]] = field(default_factory=dict)
    confidence: dict[str, dict[str, Any]] = field(default_factory=dict)
    agg_scores: dict[str, dict[str, Any]] = field(default_factory=dict)
    justifications: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Ruleset":
        def norm(m):
            return {str(f): {str(k): v for k, v in inner.items()} for f, inner in (m or {}).items()}

        return cls(
            norm(d.get("checks")),
            norm(d.get("confidence")),
            norm(d.get("agg_scores")),
            norm(d.get("justifications")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Ruleset":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def knows(self, frame_id: str) -> bool:
        return frame_id in self.checks or frame_id in self.confidence

    @staticmethod
    def _pick(value: Any, run_index: int) -> Any:
        if isinstance(value, list):
            return value[(run_index - 1) % len(value)]
        return value

    def verdict(self, frame_id: str, check_id: str, run_index: int = 1) -> str:
        try:
            return str(self._pick(self.checks[frame_id][check_id], run_index))
        except KeyError:
            return "uncertain"

    def confidence_for(self, frame_id: str, criterion_id: int, run_index: int = 1) -> float:
        return float(self._pick(self.confidence[frame_id][str(criterion_id)], run_index))


def _oracle_text(payload: PromptPayload, rules: Ruleset, run_index: int) -> str:
    meta = payload.meta
    frame_id = str(meta.get("frame_id", ""))
    crit = int(meta.get("criterion_id", 0))
    schema = payload.expected_output_schema

    if schema == SCHEMA_AGG:
        pinned = rules.agg_scores.get(frame_id, {}).get(str(crit))
        if pinned is not None:
            return f"score: {float(Ruleset._pick(pinned, run_index))!r}"
        shown = meta.get("verdicts", [])
        score = sum(v == "yes" for v in shown) / len(shown) if shown else 0.0
        return f"score: {score!r}"

    if not rules.knows(frame_id):
        raise UnknownFrameError(f"oracle ruleset has no entry for frame {frame_id!r}")

    if schema == SCHEMA_CHECKS:
        lines = []
        for check_id in meta.get("check_ids", []):
            verdict = rules.verdict(frame_id, check_id, run_index)
            why = rules.justifications.get(frame_id, {}).get(
                check_id, f"oracle verdict for {check_id} on {frame_id}"
            )
            lines.append(f"{check_id}: {verdict} — {why}")
        return "\n".join(lines)

    conf = rules.confidence_for(frame_id, crit, run_index)
    verdict = "yes" if conf > 0.5 else "no"
    if schema == SCHEMA_QA:
        return (
            f"Q: Is criterion {crit} assessable in this frame?\nA: yes\n"
            f"Q: Is criterion {crit} met?\nA: {verdict}"
        )
    answer = f"verdict: {verdict}, confidence: {conf!r}"
    if schema == SCHEMA_COT:
        return f"reasoning: oracle lookup for frame {frame_id}, criterion {crit}.\n{answer}"
    if schema == SCHEMA_SCALAR:
        return answer
    raise BackendError(f"oracle cannot answer schema {schema!r}")


def oracle_complete(payload: PromptPayload, ruleset: Ruleset, run_index: int = 1) -> ModelResponse:
    text = _oracle_text(payload, ruleset, run_index)
    return ModelResponse(text, _approx_tokens(payload.user_text), _approx_tokens(text))


class OracleBackend(Backend):
    def __init__(self, ruleset: Ruleset, cache: ResponseCache | None = None):
        super().__init__(cache)
        self.ruleset = ruleset

    def _invoke(self, payload: PromptPayload, config: ModelConfig) -> ModelResponse:
        return oracle_complete(payload, self.ruleset, config.run_index)


# --- remote dialects -----------------------------------------------------------


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def chat_request_body(payload: PromptPayload, config: ModelConfig) -> dict[str, Any]:
    """Chat-completions dialect: images as data URLs after the text part."""
    content: list[dict[str, Any]] = [{"type": "text", "text": payload.user_text}]
    for data, media in payload.images:
        content.append({"type": "image_url", "image_url": {"url": f"data:{media};base64,{_b64(data)}"}})
    return {
        "model": config.model_name,
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
        "messages": [
            {"role": "system", "content": payload.system_text},
            {"role": "user", "content": content},
        ],
    }


def messages_request_body(payload: PromptPayload, config: ModelConfig) -> dict[str, Any]:
    """Messages dialect: base64 image blocks, then the text block."""
    content: list[dict[str, Any]] = [
        {"type": "image", "source": {"type": "base64", "media_type": media, "data": _b64(data)}}
        for data, media in payload.images
    ]
    content.append({"type": "text", "text": payload.user_text})
    return {
        "model": config.model_name,
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
        "system": payload.system_text,
        "messages": [{"role": "user", "content": content}],
    }


def parse_chat_response(body: dict[str, Any]) -> ModelResponse:
    text = body["choices"][0]["message"]["content"] or ""
    usage = body.get("usage") or {}
    return ModelResponse(text, usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0))


def parse_messages_response(body: dict[str, Any]) -> ModelResponse:
    text = "".join(b.get("text", "") for b in body.get("content", []) if b.get("type") == "text")
    usage = body.get("usage") or {}
    return ModelResponse(text, usage.get("input_tokens", 0), usage.get("output_tokens", 0))


class RemoteBackend(Backend):
    """HTTP vision-chat client with retries, exponential backoff and an in-flight ceiling."""

    def __init__(
        self,
        cache: ResponseCache | None = None,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        max_in_flight: int = 8,
        max_payload_bytes: int = 20 * 1024 * 1024,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(cache)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_payload_bytes = max_payload_bytes
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep

    def _headers(self, config: ModelConfig) -> dict[str, str]:
        env = config.api_key_env or DEFAULT_KEY_ENV[config.dialect]
        key = os.environ.get(env)
        if not key:
            raise AuthError(f"no credentials: environment variable {env} is not set")
        if config.dialect == "chat":
            return {"Authorization": f"Bearer {key}", "content-type": "application/json"}
        return {"x-api-key": key, "anthropic-version": "2023-06-01", "content-type": "application/json"}

    def _backoff(self, attempt: int, retry_after: str | None) -> float:
        if retry_after:
            try:
                return float(retry_after)
            except ValueError:
                pass
        return self.backoff_base * (2 ** (attempt - 1)) * (1 + 0.1 * random.random())

    def _invoke(self, payload: PromptPayload, config: ModelConfig) -> ModelResponse:
        if config.dialect == "chat":
            body, parse = chat_request_body(payload, config), parse_chat_response
        else:
            body, parse = messages_request_body(payload, config), parse_messages_response
        data = json.dumps(body).encode("utf-8")
        if len(data) > self.max_payload_bytes:
            raise OversizedPayloadError(f"request is {len(data)} bytes, limit {self.max_payload_bytes}")
        url = config.endpoint or DEFAULT_ENDPOINTS[config.dialect]
        headers = self._headers(config)

        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            retry_after = None
            try:
                with self._limiter:
                    resp = self._client.post(url, content=data, headers=headers)
            except httpx.HTTPError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code in (401, 403):
                    raise AuthError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                if resp.status_code == 413:
                    raise OversizedPayloadError(f"HTTP 413 from {url}")
                if resp.status_code == 429:
                    last = RateLimitedError(f"HTTP 429 from {url} after {attempt} attempt(s)")
                    retry_after = resp.headers.get("retry-after")
                elif resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code} from {url}")
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                else:
                    try:
                        return parse(resp.json())
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"unreadable response body: {exc}") from exc
            if attempt < self.max_attempts:
                delay = self._backoff(attempt, retry_after)
                log.info("retrying %s in %.2fs (%s)", config.model_name, delay, last)
                self._sleep(delay)
        assert last is not None
        raise last


def make_backend(
    config: ModelConfig,
    cache: ResponseCache | None = None,
    ruleset: Ruleset | None = None,
    script: Sequence[str] | None = None,
    **remote_kwargs,
) -> Backend:
    if config.backend_kind == "oracle":
        if ruleset is None:
            raise ValueError("oracle backend needs a ruleset")
        return OracleBackend(ruleset, cache)
    if config.backend_kind == "mock":
        return MockBackend(list(script or ["verdict: no, confidence: 0.0"]), cache)
    return RemoteBackend(cache, **remote_kwargs)


def with_run(config: ModelConfig, run_index: int) -> ModelConfig:
    return replace(config, run_index=run_index)

"""Completion backends with caching, retries and bounded, order-preserving parallelism.

Two backends exist: an OpenAI-compatible chat-completions client and a
replay backend that serves fixture text keyed by prompt hash. Every request
is a single user message with no history.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union
from urllib.parse import urlparse

import httpx

from .prompts import RenderedPrompt

log = logging.getLogger(__name__)

API_KEY_ENV = "OPENAI_API_KEY"
# ~8K tokens at roughly four characters per token
LONG_PROMPT_CHARS = 32_000


class BackendKind(str, enum.Enum):
    OPENAI_COMPATIBLE_HTTP = "openai_compatible_http"
    MOCK_REPLAY = "mock_replay"


class GatewayConfigError(ValueError):
    pass


class TransportError(RuntimeError):
    """Retryable failure: timeout, connection problem or 5xx."""


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.MOCK_REPLAY
    endpoint_url: str = ""
    model_name: str = "mock"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 3
    parallelism: int = 1
    cache_dir: Optional[Path] = None
    replay_path: Optional[Path] = None
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.parallelism < 1:
            raise GatewayConfigError("parallelism must be >= 1")
        if self.max_retries < 0:
            raise GatewayConfigError("max_retries must be >= 0")
        if self.kind is BackendKind.OPENAI_COMPATIBLE_HTTP:
            parsed = urlparse(self.endpoint_url)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise GatewayConfigError(f"malformed endpoint URL: {self.endpoint_url!r}")
            if not self.model_name:
                raise GatewayConfigError("model_name is required for the HTTP backend")
        if self.cache_dir is not None:
            object.__setattr__(self, "cache_dir", Path(self.cache_dir))
        if self.replay_path is not None:
            object.__setattr__(self, "replay_path", Path(self.replay_path))

    def describe(self) -> dict:
        """Config echo for run summaries. Never includes credentials."""
        return {
            "kind": self.kind.value,
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "max_retries": self.max_retries,
            "parallelism": self.parallelism,
        }


@dataclass(frozen=True)
class CompletionResult:
    instance_id: str
    task: str
    raw_text: str
    status: str = "ok"  # "ok" or "transport_error"
    error: Optional[str] = None
    latency: float = 0.0
    from_cache: bool = False
    attempts: int = 1
    prompt_chars: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def cache_key(prompt_text: str, model_name: str, temperature: float) -> str:
    """Hex digest over prompt hash, model and temperature. The endpoint is deliberately excluded."""
    payload = json.dumps(
        {
            "prompt_sha256": hashlib.sha256(prompt_text.encode("utf-8")).hexdigest(),
            "model": model_name,
            "temperature": float(temperature),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """One ``<key>.txt`` file per response plus a ``<key>.json`` sidecar."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def get(self, key: str) -> Optional[str]:
        path = self.root / f"{key}.txt"
        try:
            with open(path, "rb") as fh:
                return fh.read().decode("utf-8")
        except FileNotFoundError:
            return None

    def put(self, key: str, text: str, model_name: str) -> None:
        sidecar = json.dumps({"model": model_name, "timestamp": time.time()})
        with self._lock:
            self._atomic_write(self.root / f"{key}.txt", text.encode("utf-8"))
            self._atomic_write(self.root / f"{key}.json", sidecar.encode("utf-8"))

    def _atomic_write(self, path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def load_replay_fixtures(path: Union[str, Path]) -> dict[str, str]:
    """Replay fixtures: a JSON object mapping prompt sha256 (or ``instance_id:task``) to reply text."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise GatewayConfigError(f"{path}: replay fixtures must be a JSON object of strings")
    return data




class Gateway:
    """Dispatches prompts to the configured backend.

    ``replay`` overrides the fixtures file for the mock backend;
    ``http_client`` lets tests inject an ``httpx.Client`` with a mock transport.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        replay: Optional[Mapping[str, str]] = None,
        http_client: Optional[httpx.Client] = None,
        api_key: Optional[str] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._sleep = sleep
        self._cache = ResponseCache(config.cache_dir) if config.cache_dir else None
        if config.kind is BackendKind.MOCK_REPLAY:
            if replay is None:
                replay = load_replay_fixtures(config.replay_path) if config.replay_path else {}
            self._replay = dict(replay)
            self._client = None
        else:
            self._replay = {}
            self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
            if not self._api_key:
                raise GatewayConfigError(f"set the {API_KEY_ENV} environment variable to use the HTTP backend")
            self._client = http_client or httpx.Client(timeout=config.request_timeout)

    # -- backends -------------------------------------------------------

    def _send_replay(self, prompt: RenderedPrompt, instance_id: str) -> str:
        for key in (prompt.sha256, f"{instance_id}:{prompt.task.value}"):
            if key in self._replay:
                return self._replay[key]
        raise TransportError(f"no replay fixture for prompt {prompt.sha256[:12]} ({instance_id}:{prompt.task.value})")

    def _url(self) -> str:
        base = self.config.endpoint_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def _send_http(self, prompt: RenderedPrompt) -> str:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        try:
            resp = self._client.post(self._url(), json=body, headers=headers, timeout=self.config.request_timeout)
        except (httpx.TimeoutException, httpx.NetworkError, httpx.RemoteProtocolError) as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayConfigError(f"HTTP {resp.status_code} from {self._url()}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {exc}") from exc
        return content if isinstance(content, str) else ""

    # -- public ---------------------------------------------------------

    def complete(self, prompt: RenderedPrompt, instance_id: str = "") -> CompletionResult:
        cfg = self.config
        warnings = []
        if len(prompt.text) > LONG_PROMPT_CHARS:
            warnings.append(f"long prompt: {len(prompt.text)} characters")
        key = cache_key(prompt.text, cfg.model_name, cfg.temperature)
        if self._cache is not None:
            cached = self._cache.get(key)
            if cached is not None:
                return CompletionResult(
                    instance_id, prompt.task.value, cached, from_cache=True,
                    attempts=0, prompt_chars=len(prompt.text), warnings=tuple(warnings),
                )

        start = time.monotonic()
        attempts = 0
        last_error = ""
        while attempts <= cfg.max_retries:
            if attempts:
                self._sleep(cfg.backoff_base * 2 ** (attempts - 1))
            attempts += 1
            try:
                if cfg.kind is BackendKind.MOCK_REPLAY:
                    text = self._send_replay(prompt, instance_id)
                else:
                    text = self._send_http(prompt)
            except TransportError as exc:
                last_error = str(exc)
                log.warning("attempt %d for %s failed: %s", attempts, instance_id or prompt.sha256[:12], exc)
                continue
            if self._cache is not None:
                self._cache.put(key, text, cfg.model_name)
            return CompletionResult(
                instance_id, prompt.task.value, text, latency=time.monotonic() - start,
                attempts=attempts, prompt_chars=len(prompt.text), warnings=tuple(warnings),
            )
        return CompletionResult(
            instance_id, prompt.task.value, "", status="transport_error", error=last_error,
            latency=time.monotonic() - start, attempts=attempts,
            prompt_chars=len(prompt.text), warnings=tuple(warnings),
        )

    def complete_batch(
        self, prompts: Sequence[RenderedPrompt], instance_ids: Optional[Sequence[str]] = None
    ) -> list[CompletionResult]:
        """Results come back in input order; at most ``parallelism`` requests are in flight."""
        ids = list(instance_ids) if instance_ids is not None else [""] * len(prompts)
        if len(ids) != len(prompts):
            raise ValueError("instance_ids and prompts differ in length")
        if self.config.parallelism == 1 or len(prompts) <= 1:
            return [self.complete(p, i) for p, i in zip(prompts, ids)]
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            return list(pool.map(self.complete, prompts, ids))


def complete(prompt: RenderedPrompt, config: BackendConfig, instance_id: str = "", **kwargs) -> CompletionResult:
    return Gateway(config, **kwargs).complete(prompt, instance_id)


def complete_batch(
    prompts: Sequence[RenderedPrompt], config: BackendConfig, instance_ids: Optional[Sequence[str]] = None, **kwargs
) -> list[CompletionResult]:
    return Gateway(config, **kwargs).complete_batch(prompts, instance_ids)

"""Text-generation backends: an HTTP chat-completion client and a
deterministic mock for tests and offline runs.

Both clients implement :meth:`generate` and never alter the prompt they are
given; an optional ``on_send`` hook observes the exact prompt sent, which
tests use to assert that fact.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from .prompting import OUTPUT_FORMAT_HEADER, QUESTION_LABEL


class LLMError(Exception):
    """Base class for generation backend failures."""


class TransportError(LLMError):
    """Network-level failure that persisted through all retries."""


class AuthenticationError(LLMError):
    """Missing or rejected API credentials."""


class BackendRefusalError(LLMError):
    """The backend answered but produced no usable completion."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    num_samples: int = 1
    temperature: float = 0.7
    max_output_tokens: int = 512

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class GenerationResult:
    """Completions as (text, score) pairs, one per requested sample. The
    score is the mean per-token log-probability when the backend reports
    token probabilities, else 0.0.
    """

    completions: tuple[tuple[str, float], ...]


class TokenBucket:
    """Simple token-bucket limiter for requests per minute. ``acquire``
    blocks until a token is available. Thread-safe.
    """

    def __init__(
        self,
        requests_per_minute: float,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self._rate = requests_per_minute / 60.0
        self._capacity = max(1.0, requests_per_minute / 60.0)
        self._tokens = self._capacity
        self._clock = clock
        self._sleeper = sleeper
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleeper(wait)


def prompt_hash(prompt: str) -> str:
    """Stable key for a prompt, used by fixture files and caches."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _expected_labels(prompt: str) -> list[str]:
    """Labels declared in the prompt's output-format block."""
    lines = prompt.splitlines()
    labels = []
    in_block = False
    for line in lines:
        if line.strip() == OUTPUT_FORMAT_HEADER:
            in_block = True
            continue
        if in_block:
            if not line.strip():
                break
            label = line.split(" ", 1)[0]
            if label.endswith(":"):
                labels.append(label)
    return labels or ["Rewrite:"]


def _current_question(prompt: str) -> str:
    question = ""
    for line in prompt.splitlines():
        if line.startswith(QUESTION_LABEL):
            question = line[len(QUESTION_LABEL):].strip()
    return question or "the topic"


class MockLLM:
    """Deterministic stand-in for a chat-completion service.

    Completions come from a fixture table mapping prompt hashes to (text,
    score) pairs when one is supplied; otherwise they are derived purely from
    ``(seed, prompt, sample index)``, echoing the prompt's final question in
    the labeled format the prompt declares. Identical inputs produce
    byte-identical outputs on every platform. At temperature 0 all samples of
    a request collapse to the first one.
    """

    def __init__(
        self,
        seed: int = 0,
        fixtures: dict[str, list[tuple[str, float]]] | None = None,
        fixture_path: str | Path | None = None,
        on_send: Callable[[str], None] | None = None,
    ):
        self.seed = seed
        self.on_send = on_send
        self._fixtures: dict[str, list[tuple[str, float]]] = {}
        if fixtures:
            self._fixtures.update({k: [(t, float(s)) for t, s in v] for k, v in fixtures.items()})
        if fixture_path is not None:
            with open(fixture_path, encoding="utf-8") as handle:
                loaded = json.load(handle)
            for key, completions in loaded.items():
                self._fixtures[key] = [(c[0], float(c[1])) for c in completions]

    @property
    def signature(self) -> str:
        return f"mock:{self.seed}"

    def _digest(self, prompt: str, index: int) -> bytes:
        payload = f"{self.seed}|{index}|".encode("utf-8") + prompt.encode("utf-8")
        return hashlib.blake2b(payload, digest_size=8).digest()

    def _synthesize(self, prompt: str, index: int) -> tuple[str, float]:
        digest = self._digest(prompt, index)
        tag = digest.hex()
        question = _current_question(prompt)
        topic = question.rstrip("?.! ")
        lines = []
        for label in _expected_labels(prompt):
            if label == "Thought:":
                lines.append(f"{label} The user is asking about {topic.lower()} given the conversation so far.")
            elif label == "Rewrite:":
                lines.append(f"{label} {topic} (angle {tag[:4]})?")
            elif label == "Response:":
                lines.append(
                    f"{label} Regarding {topic.lower()}: relevant facts include detail {tag[:4]} "
                    f"and detail {tag[4:8]}, which together address the question."
                )
            else:
                lines.append(f"{label} {tag}")
        score = -0.1 - (int.from_bytes(digest, "big") % 1000) / 1000.0
        return "\n".join(lines), score

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if not request.prompt:
            raise ValueError("prompt must be non-empty")
        if self.on_send is not None:
            self.on_send(request.prompt)
        key = prompt_hash(request.prompt)
        if key in self._fixtures:
            table = self._fixtures[key]
            if len(table) < request.num_samples:
                raise BackendRefusalError(
                    f"fixture has {len(table)} completions but {request.num_samples} were requested"
                )
            return GenerationResult(completions=tuple(table[: request.num_samples]))
        completions = []
        for i in range(request.num_samples):
            effective = 0 if request.temperature == 0 else i
            completions.append(self._synthesize(request.prompt, effective))
        return GenerationResult(completions=tuple(completions))


class HttpLLM:
    """Client for an OpenAI-style chat-completions endpoint.

    The flat prompt is sent as a single user message. Transient transport
    failures (timeouts, connection errors, 429/5xx) are retried with
    exponential backoff up to ``max_retries`` before raising
    :class:`TransportError`. Concurrent use is safe; in-flight requests are
    bounded by ``max_in_flight`` and optionally rate-limited.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "CONVSEARCH_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        requests_per_minute: float | None = None,
        max_in_flight: int = 8,
        on_send: Callable[[str], None] | None = None,
        session: requests.Session | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.on_send = on_send
        self._session = session or requests.Session()
        self._limiter = TokenBucket(requests_per_minute) if requests_per_minute else None
        self._inflight = threading.Semaphore(max_in_flight)
        self._sleep = sleeper

    @property
    def signature(self) -> str:
        return f"http:{self.endpoint}:{self.model}"

    def _api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthenticationError(f"API key env var {self.api_key_env} is not set")
        return key

    def _post(self, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            if self._limiter is not None:
                self._limiter.acquire()
            try:
                with self._inflight:
                    response = self._session.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthenticationError(f"backend rejected credentials ({response.status_code})")
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(f"backend returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise LLMError(f"backend returned {response.status_code}: {response.text[:200]}")
            return response.json()
        raise TransportError(f"request failed after {self.max_retries + 1} attempts: {last_error}")

    @staticmethod
    def _score_choice(choice: dict) -> float:
        logprobs = choice.get("logprobs")
        if not logprobs:
            return 0.0
        content = logprobs.get("content") or []
        values = [tok["logprob"] for tok in content if "logprob" in tok]
        if not values:
            return 0.0
        return sum(values) / len(values)

    def _request_batch(self, request: GenerationRequest, n: int) -> list[tuple[str, float]]:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "n": n,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        data = self._post(payload)
        completions = []
        for choice in data.get("choices", []):
            text = (choice.get("message") or {}).get("content") or ""
            if not text.strip():
                raise BackendRefusalError("backend returned an empty completion")
            completions.append((text, self._score_choice(choice)))
        if not completions:
            raise BackendRefusalError("backend returned no choices")
        return completions

    def generate(self, request: GenerationRequest) -> GenerationResult:
        if not request.prompt:
            raise ValueError("prompt must be non-empty")
        if self.on_send is not None:
            self.on_send(request.prompt)
        completions = self._request_batch(request, request.num_samples)
        # Backends that ignore n: top up with single-sample calls.
        while len(completions) < request.num_samples:
            completions.extend(self._request_batch(request, 1))
        return GenerationResult(completions=tuple(completions[: request.num_samples]))

"""Chat-completion backends, retries, and token/cost accounting."""

from __future__ import annotations

import fnmatch
import json
import logging
import os
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
PHASES = ("pre_falsification", "falsification")


class LLMError(RuntimeError):
    """Base class for backend failures."""


class TransportError(LLMError):
    """A retryable failure talking to the backend."""


class RateLimitError(TransportError):
    """The backend asked us to slow down."""


class ScenarioMiss(LLMError):
    """The scripted backend has no response for a request key."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no scripted response for key {key!r}")


class ScenarioError(LLMError):
    """A scenario file is malformed or a template could not be rendered."""


class PriceTableError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """``key`` routes scripted lookups and ``variables`` feed response templates; neither goes on the wire."""

    messages: tuple[Message, ...]
    temperature: float = 0.7
    model: str = "default"
    max_tokens: int = 2048
    key: str = ""
    variables: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def wire_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: Usage


class Backend(Protocol):
    def send(self, request: ChatRequest) -> ChatResponse: ...


def count_tokens(text: str) -> int:
    """Whitespace token count. A deterministic stand-in, not a real tokenizer."""
    return len(text.split())


def _unique_object(pairs: list[tuple[str, Any]]) -> dict:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise ScenarioError(f"duplicate scenario key {k!r}")
        out[k] = v
    return out


def load_scenario(path: str | Path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh, object_pairs_hook=_unique_object)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return _check_scenario(data, str(path))


def _check_scenario(data: Any, where: str) -> dict[str, str]:
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: a scenario must be a JSON object")
    for k, v in data.items():
        if not isinstance(v, str):
            raise ScenarioError(f"{where}: response for {k!r} must be a string")
    return dict(data)


class ScriptedBackend:
    """Replays canned responses keyed by ``role/iteration/thread/step``.

    Exact keys win; otherwise the first glob pattern (file order) that matches.
    Responses are ``string.Template`` texts rendered with the request variables.
    """

    def __init__(self, scenario: Mapping[str, str], name: str = "scenario"):
        self.name = name
        self._exact = _check_scenario(dict(scenario), name)
        self._patterns = [(k, v) for k, v in self._exact.items() if any(ch in k for ch in "*?[")]
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls(load_scenario(path), name=Path(path).stem)

    @property
    def keys(self) -> list[str]:
        return list(self._exact)

    def resolve(self, key: str) -> str:
        if key in self._exact:
            return self._exact[key]
        for pattern, template in self._patterns:
            if fnmatch.fnmatchcase(key, pattern):
                return template
        raise ScenarioMiss(key)

    def send(self, request: ChatRequest) -> ChatResponse:
        template = self.resolve(request.key)
        variables = {k: _fmt(v) for k, v in request.variables.items()}
        try:
            text = string.Template(template).substitute(variables)
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"cannot render response for {request.key!r}: {exc!r}") from None
        with self._lock:
            self.calls.append(request.key)
        prompt_tokens = sum(count_tokens(m.content) for m in request.messages)
        return ChatResponse(text, Usage(prompt_tokens, count_tokens(text)))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def set_scenario(path: str | Path) -> ScriptedBackend:
    return ScriptedBackend.from_file(path)


class HttpBackend:
    """Talks the common chat-completions JSON protocol over HTTP."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LABLOOP_API_KEY",
        timeout: float = 60.0,
        client: Any = None,
    ):
        import httpx

        self._httpx = httpx
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def send(self, request: ChatRequest) -> ChatResponse:
        httpx = self._httpx
        payload = request.wire_payload()
        payload["model"] = self.model if request.model == "default" else request.model
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(self.url, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"request to {self.url} failed: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimitError(f"rate limited by {self.url}")
        if resp.status_code >= 500:
            raise TransportError(f"{self.url} answered {resp.status_code}")
        if resp.status_code >= 400:
            raise LLMError(f"{self.url} rejected the request ({resp.status_code}): {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage", {})
            return ChatResponse(text, Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LLMError(f"malformed completion response: {exc!r}") from exc


@dataclass(frozen=True)
class PriceTable:
    """Dollar rates per one million tokens."""

    input_per_million: float = 5.0
    output_per_million: float = 15.0

    def cost(self, input_tokens: float, output_tokens: float) -> float:
        return (input_tokens * self.input_per_million + output_tokens * self.output_per_million) / 1_000_000


@dataclass
class PhaseTotals:
    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "calls": self.calls}


class CostLedger:
    def __init__(self, prices: PriceTable | None = PriceTable()):
        self.prices = prices
        self._totals: dict[str, PhaseTotals] = {}
        self._lock = threading.Lock()

    def record(self, phase: str, usage: Usage) -> None:
        with self._lock:
            t = self._totals.setdefault(phase, PhaseTotals())
            t.input_tokens += usage.input_tokens
            t.output_tokens += usage.output_tokens
            t.calls += 1

    def restore(self, phase: str, totals: Mapping[str, int]) -> None:
        """Add previously recorded totals, e.g. when resuming a run."""
        with self._lock:
            t = self._totals.setdefault(phase, PhaseTotals())
            t.input_tokens += int(totals.get("input_tokens", 0))
            t.output_tokens += int(totals.get("output_tokens", 0))
            t.calls += int(totals.get("calls", 0))

    def totals(self, phase: str) -> PhaseTotals:
        with self._lock:
            t = self._totals.get(phase, PhaseTotals())
            return PhaseTotals(t.input_tokens, t.output_tokens, t.calls)

    def phases(self) -> list[str]:
        with self._lock:
            return sorted(self._totals)

    def cost(self, phase: str) -> float:
        if self.prices is None:
            raise PriceTableError("no price table configured")
        t = self.totals(phase)
        return self.prices.cost(t.input_tokens, t.output_tokens)


def cost(ledger: CostLedger, phase: str) -> float:
    return ledger.cost(phase)


class Gateway:
    """Sends requests through a backend with bounded retries and records usage."""

    def __init__(
        self,
        backend: Backend,
        ledger: CostLedger | None = None,
        attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.ledger = ledger if ledger is not None else CostLedger()
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep

    def complete(self, request: ChatRequest, phase: str) -> ChatResponse:
        delay = self.backoff
        for attempt in range(1, self.attempts + 1):
            try:
                response = self.backend.send(request)
            except TransportError as exc:
                if attempt == self.attempts:
                    raise
                log.warning("attempt %d for %s failed (%s); retrying in %.1fs", attempt, request.key, exc, delay)
                self._sleep(delay)
                delay *= 2
                continue
            self.ledger.record(phase, response.usage)
            return response
        raise AssertionError("unreachable")


def complete(gateway: Gateway, request: ChatRequest, phase: str) -> ChatResponse:
    return gateway.complete(request, phase)

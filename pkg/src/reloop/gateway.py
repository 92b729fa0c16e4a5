"""Single choke-point for all model calls.

Every agent's model use goes through :class:`LLMGateway.complete` or
:meth:`LLMGateway.complete_structured`; the gateway owns per-role
configuration, retries with exponential backoff, admission control per
backend, and token/cost accounting. No other module performs network I/O
to model backends.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from .store import micro_to_usd, usd_to_micro

logger = logging.getLogger(__name__)

ROLE_NAMES = (
    "surveyor",
    "reviewer",
    "generator",
    "evolver",
    "assessor",
    "methodologist",
    "coder",
    "debugger",
)

# The idea generator runs hottest to diversify output; scoring and code
# roles run cold. Overridable per session.
DEFAULT_TEMPERATURES = {
    "surveyor": 0.3,
    "reviewer": 0.2,
    "generator": 1.0,
    "evolver": 0.8,
    "assessor": 0.2,
    "methodologist": 0.3,
    "coder": 0.2,
    "debugger": 0.2,
}

DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_S = 1.0
STRUCTURED_REASKS = 2


class GatewayError(RuntimeError):
    pass


class BackendUnavailable(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class TransientBackendError(RuntimeError):
    """Raised by backends for retryable failures."""


@dataclass(frozen=True)
class ModelRole:
    name: str
    temperature: float
    backend_id: str

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Completion:
    text: str
    tokens_in: int
    tokens_out: int
    cost_usd: float
    backend_id: str
    latency_ms: float


@dataclass(frozen=True)
class CostEntry:
    role: str
    backend_id: str
    tokens_in: int
    tokens_out: int
    cost_micro: int
    phase: str

    @property
    def cost_usd(self) -> float:
        return micro_to_usd(self.cost_micro)

    def to_payload(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "backend_id": self.backend_id,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "cost_micro": self.cost_micro,
            "cost_usd": self.cost_usd,
            "phase": self.phase,
        }


class Backend(Protocol):
    backend_id: str
    rate_in_usd: float
    rate_out_usd: float
    max_concurrency: int

    def send(
        self, role: str, prompt: str, context: Sequence[str], temperature: float
    ) -> tuple[str, int, int]:
        """Returns (text, tokens_in, tokens_out); raises TransientBackendError."""
        ...


@dataclass
class GatewayStats:
    calls: int = 0
    retries: int = 0
    reasks: int = 0
    failures: int = 0


# FieldSchema maps field name -> one of: string, number, integer, boolean,
# list, object. Deeper shape checks belong to the caller's validator.
FieldSchema = Mapping[str, str]

_TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "string": lambda v: isinstance(v, str),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


def extract_json_object(text: str) -> Any:
    """Parse the first balanced JSON object or array embedded in ``text``."""
    for opener, closer in (("{", "}"), ("[", "]")):
        start = text.find(opener)
        while start != -1:
            depth = 0
            in_string = False
            escaped = False
            for i in range(start, len(text)):
                ch = text[i]
                if in_string:
                    if escaped:
                        escaped = False
                    elif ch == "\\":
                        escaped = True
                    elif ch == '"':
                        in_string = False
                    continue
                if ch == '"':
                    in_string = True
                elif ch == opener:
                    depth += 1
                elif ch == closer:
                    depth -= 1
                    if depth == 0:
                        try:
                            return json.loads(text[start : i + 1])
                        except json.JSONDecodeError:
                            break
            start = text.find(opener, start + 1)
    raise ValueError("no parsable JSON value found")


def validate_schema(parsed: Any, schema: FieldSchema) -> str | None:
    """Returns a problem description, or None when the payload is valid."""
    if not isinstance(parsed, dict):
        return f"expected a JSON object, got {type(parsed).__name__}"
    for name, kind in schema.items():
        if name not in parsed:
            return f"missing field {name!r}"
        checker = _TYPE_CHECKS.get(kind)
        if checker is None:
            raise ValueError(f"unknown schema type {kind!r} for field {name!r}")
        if not checker(parsed[name]):
            return f"field {name!r} is not of type {kind}"
    return None


class LLMGateway:
    """Role-routed completion calls with retries and cost accounting."""

    def __init__(
        self,
        backends: Mapping[str, Backend],
        roles: Mapping[str, ModelRole] | None = None,
        cost_sink: Callable[[CostEntry], None] | None = None,
        phase_provider: Callable[[], str] | None = None,
        event_sink: Callable[[str, dict[str, Any]], Any] | None = None,
        retries: int = DEFAULT_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._backends = dict(backends)
        self._roles: dict[str, ModelRole] = {}
        self._cost_sink = cost_sink
        self._phase_provider = phase_provider or (lambda: "unknown")
        self._event_sink = event_sink
        self._retries = retries
        self._backoff_s = backoff_s
        self._sleep = sleep
        self._semaphores = {
            bid: threading.Semaphore(max(1, getattr(b, "max_concurrency", 8)))
            for bid, b in self._backends.items()
        }
        self._ledger_lock = threading.Lock()
        self.stats = GatewayStats()
        for role in (roles or {}).values():
            self.register(role)

    @classmethod
    def with_default_roles(cls, backend: Backend, **kwargs: Any) -> "LLMGateway":
        gateway = cls({backend.backend_id: backend}, **kwargs)
        for name in ROLE_NAMES:
            gateway.register(ModelRole(name, DEFAULT_TEMPERATURES[name], backend.backend_id))
        return gateway

    def register(self, role: ModelRole) -> None:
        if role.backend_id not in self._backends:
            raise ValueError(f"role {role.name!r} maps to unknown backend {role.backend_id!r}")
        self._roles[role.name] = role

    def role(self, name: str) -> ModelRole:
        if name not in self._roles:
            raise ValueError(f"role {name!r} not registered")
        return self._roles[name]

    def has_role(self, name: str) -> bool:
        return name in self._roles

    def _emit(self, kind: str, payload: dict[str, Any]) -> None:
        if self._event_sink is not None:
            self._event_sink(kind, payload)

    def complete(
        self, role: str | ModelRole, prompt: str, context: Sequence[str] = ()
    ) -> Completion:
        if isinstance(role, str):
            role = self.role(role)
        elif role.name not in self._roles:
            raise ValueError(f"role {role.name!r} not registered")
        if not prompt.strip():
            raise ValueError("prompt must be non-empty")
        backend = self._backends[role.backend_id]
        semaphore = self._semaphores[role.backend_id]
        last_error: Exception | None = None
        for attempt in range(self._retries + 1):
            if attempt:
                self.stats.retries += 1
                self._emit(
                    "retry",
                    {"role": role.name, "backend_id": role.backend_id, "attempt": attempt},
                )
                self._sleep(self._backoff_s * (2 ** (attempt - 1)))
            started = time.perf_counter()
            try:
                with semaphore:
                    text, tokens_in, tokens_out = backend.send(
                        role.name, prompt, context, role.temperature
                    )
            except TransientBackendError as exc:
                last_error = exc
                continue
            latency_ms = (time.perf_counter() - started) * 1000.0
            self.stats.calls += 1
            cost_micro = usd_to_micro(
                tokens_in * backend.rate_in_usd + tokens_out * backend.rate_out_usd
            )
            self._record_cost(role, backend, tokens_in, tokens_out, cost_micro)
            return Completion(
                text=text,
                tokens_in=tokens_in,
                tokens_out=tokens_out,
                cost_usd=micro_to_usd(cost_micro),
                backend_id=backend.backend_id,
                latency_ms=0.0 if getattr(backend, "deterministic", False) else latency_ms,
            )
        self.stats.failures += 1
        raise BackendUnavailable(
            f"backend {role.backend_id!r} unavailable after {self._retries} retries: {last_error}"
        )

    def _record_cost(
        self,
        role: ModelRole,
        backend: Backend,
        tokens_in: int,
        tokens_out: int,
        cost_micro: int,
    ) -> None:
        if self._cost_sink is None:
            return
        entry = CostEntry(
            role=role.name,
            backend_id=backend.backend_id,
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost_micro=cost_micro,
            phase=self._phase_provider(),
        )
        with self._ledger_lock:
            self._cost_sink(entry)

    def complete_structured(
        self,
        role: str | ModelRole,
        prompt: str,
        schema: FieldSchema,
        context: Sequence[str] = (),
        validator: Callable[[dict[str, Any]], str | None] | None = None,
    ) -> dict[str, Any]:
        """Completion parsed against ``schema``; re-asks with a repair prompt
        up to twice before raising MalformedResponse."""
        if not schema:
            raise ValueError("schema must declare at least one field")
        ask = prompt
        problem = ""
        for attempt in range(1 + STRUCTURED_REASKS):
            if attempt:
                self.stats.reasks += 1
                ask = (
                    f"{prompt}\n### repair\n"
                    f"The previous reply could not be used: {problem}. "
                    f"Respond with only a JSON object with fields "
                    f"{', '.join(f'{k} ({v})' for k, v in schema.items())}."
                )
            completion = self.complete(role, ask, context)
            try:
                parsed = extract_json_object(completion.text)
            except ValueError as exc:
                problem = str(exc)
                continue
            issue = validate_schema(parsed, schema)
            if issue is None and validator is not None:
                issue = validator(parsed)
            if issue is None:
                return parsed
            problem = issue
        role_name = role if isinstance(role, str) else role.name
        raise MalformedResponse(f"role {role_name}: {problem}")


@dataclass
class HTTPBackend:
    """Minimal chat-completion adapter over HTTP/JSON.

    The request and response shapes are configurable per backend in the
    session config: the request body is a template with model/messages/
    temperature/max_tokens; the reply fields are read via dotted paths.
    """

    backend_id: str
    url: str
    model: str
    rate_in_usd: float = 0.0
    rate_out_usd: float = 0.0
    max_concurrency: int = 8
    headers: dict[str, str] = field(default_factory=dict)
    text_path: str = "choices.0.message.content"
    tokens_in_path: str = "usage.prompt_tokens"
    tokens_out_path: str = "usage.completion_tokens"
    max_tokens: int = 2048
    timeout_s: float = 120.0

    def send(
        self, role: str, prompt: str, context: Sequence[str], temperature: float
    ) -> tuple[str, int, int]:
        messages = [{"role": "system", "content": c} for c in context]
        messages.append({"role": "user", "content": prompt})
        body = json.dumps(
            {
                "model": self.model,
                "messages": messages,
                "temperature": temperature,
                "max_tokens": self.max_tokens,
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            self.url,
            data=body,
            headers={"Content-Type": "application/json", **self.headers},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                payload = json.loads(response.read().decode("utf-8"))
        except Exception as exc:  # transport and HTTP errors are retryable
            raise TransientBackendError(str(exc)) from exc
        text = _dig(payload, self.text_path)
        tokens_in = _dig(payload, self.tokens_in_path, default=len(prompt.split()))
        tokens_out = _dig(payload, self.tokens_out_path, default=len(str(text).split()))
        return str(text), int(tokens_in), int(tokens_out)


def _dig(payload: Any, path: str, default: Any = None) -> Any:
    current = payload
    for part in path.split("."):
        try:
            current = current[int(part)] if part.isdigit() else current[part]
        except (KeyError, IndexError, TypeError):
            return default
    return current

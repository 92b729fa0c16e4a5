"""Session configuration: one JSON document per session, for reproducibility.

The document mirrors the survey/evolution/debug configs, the assessment
weights, the role-to-backend mapping, the paper provider, and the coder.
Relative paths are resolved against the config file's directory. Offline
mode forces the scripted mock backends, the file-backed paper provider,
the stub coder, and the deterministic logical clock.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .clocks import Clock, LogicalClock, WallClock
from .coders import Coder, StubCoder, SubprocessCoder
from .domain import TaskSpec
from .gateway import (
    DEFAULT_TEMPERATURES,
    ROLE_NAMES,
    CostEntry,
    HTTPBackend,
    LLMGateway,
    ModelRole,
)
from .mockllm import MockBackend, load_script
from .orchestrator import Orchestrator, SessionSettings
from .store import SessionStore
from .survey import FileProvider, HTTPProvider, PaperSearchProvider


class ConfigError(ValueError):
    pass


class SinkRelay:
    """Late-bound event/cost sinks: the gateway is built before the
    orchestrator that ultimately receives its entries."""

    def __init__(self) -> None:
        self._orchestrator: Orchestrator | None = None

    def bind(self, orchestrator: Orchestrator) -> None:
        self._orchestrator = orchestrator

    def cost(self, entry: CostEntry) -> None:
        if self._orchestrator is not None:
            self._orchestrator._emit("cost", entry.to_payload())

    def event(self, kind: str, payload: dict[str, Any]) -> None:
        if self._orchestrator is not None:
            self._orchestrator._emit(kind, payload)

    def phase(self) -> str:
        if self._orchestrator is None:
            return "unknown"
        return self._orchestrator.view.phase


@dataclass
class AppConfig:
    session_id: str
    seed: int
    store_dir: Path
    task: TaskSpec | None
    settings: SessionSettings
    offline: bool
    base_dir: Path
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, offline_override: bool = False) -> "AppConfig":
        config_path = Path(path)
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, config_path.parent, offline_override)

    @classmethod
    def from_dict(
        cls,
        raw: dict[str, Any],
        base_dir: Path,
        offline_override: bool = False,
    ) -> "AppConfig":
        base_dir = base_dir.resolve()
        offline = bool(raw.get("offline", False)) or offline_override
        task = None
        task_raw = raw.get("task")
        if raw.get("task_file"):
            task_path = _resolve(base_dir, raw["task_file"])
            try:
                task_raw = json.loads(task_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read task file: {exc}") from exc
        if task_raw is not None:
            task_raw = dict(task_raw)
            if task_raw.get("baseline_path"):
                task_raw["baseline_path"] = str(_resolve(base_dir, task_raw["baseline_path"]))
            try:
                task = TaskSpec.from_dict(task_raw)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"invalid task: {exc}") from exc
        try:
            settings = SessionSettings.from_dict(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid settings: {exc}") from exc
        return cls(
            session_id=raw.get("session_id", ""),
            seed=int(raw.get("seed", 0)),
            store_dir=_resolve(base_dir, raw.get("store_dir", "sessions")),
            task=task,
            settings=settings,
            offline=offline,
            base_dir=base_dir,
            raw=raw,
        )

    # -- component builders -------------------------------------------------------

    def build_clock(self) -> Clock:
        if self.offline or self.raw.get("deterministic", False):
            return LogicalClock()
        return WallClock()

    def build_store(self) -> SessionStore:
        return SessionStore(self.store_dir)

    def build_provider(self) -> PaperSearchProvider:
        spec = self.raw.get("provider", {})
        kind = spec.get("kind", "file")
        if self.offline and kind != "file":
            raise ConfigError("offline mode requires the file-backed paper provider")
        if kind == "file":
            fixtures = spec.get("fixtures_dir")
            if not fixtures:
                raise ConfigError("file provider needs fixtures_dir")
            return FileProvider(_resolve(self.base_dir, fixtures))
        if kind == "http":
            return HTTPProvider(spec["base_url"], timeout_s=spec.get("timeout_s", 60.0))
        raise ConfigError(f"unknown provider kind {kind!r}")

    def build_coder(self) -> Coder:
        spec = self.raw.get("coder", {"kind": "stub"})
        kind = spec.get("kind", "stub")
        if self.offline and kind != "stub":
            raise ConfigError("offline mode requires the stub coder")
        if kind == "stub":
            script = spec.get("script")
            if script:
                return StubCoder.from_file(_resolve(self.base_dir, script))
            return StubCoder()
        if kind == "subprocess":
            return SubprocessCoder(
                spec["command"], timeout_s=spec.get("timeout_s", 600.0)
            )
        raise ConfigError(f"unknown coder kind {kind!r}")

    def build_gateway(self, relay: SinkRelay, clock: Clock) -> LLMGateway:
        backends: dict[str, Any] = {}
        specs = self.raw.get("backends") or {"mock": {"kind": "mock"}}
        for backend_id, spec in specs.items():
            kind = spec.get("kind", "mock")
            if self.offline and kind != "mock":
                kind = "mock"  # offline forces scripted mocks, keeping ids
            if kind == "mock":
                script = []
                if spec.get("script"):
                    script = load_script(_resolve(self.base_dir, spec["script"]))
                backends[backend_id] = MockBackend(
                    seed=self.seed,
                    script=script,
                    backend_id=backend_id,
                    rate_in_usd=spec.get("rate_in_usd", 1e-6),
                    rate_out_usd=spec.get("rate_out_usd", 2e-6),
                    max_concurrency=spec.get("max_concurrency", 8),
                )
            elif kind == "http":
                backends[backend_id] = HTTPBackend(
                    backend_id=backend_id,
                    url=spec["url"],
                    model=spec.get("model", ""),
                    rate_in_usd=spec.get("rate_in_usd", 0.0),
                    rate_out_usd=spec.get("rate_out_usd", 0.0),
                    max_concurrency=spec.get("max_concurrency", 8),
                    headers=_auth_headers(spec),
                    text_path=spec.get("text_path", "choices.0.message.content"),
                    tokens_in_path=spec.get("tokens_in_path", "usage.prompt_tokens"),
                    tokens_out_path=spec.get("tokens_out_path", "usage.completion_tokens"),
                )
            else:
                raise ConfigError(f"unknown backend kind {kind!r}")
        default_backend = next(iter(backends))
        roles: dict[str, ModelRole] = {}
        role_specs = self.raw.get("roles", {})
        for name in ROLE_NAMES:
            spec = role_specs.get(name, {})
            backend_id = spec.get("backend", default_backend)
            if backend_id not in backends:
                raise ConfigError(f"role {name!r} maps to unknown backend {backend_id!r}")
            roles[name] = ModelRole(
                name,
                float(spec.get("temperature", DEFAULT_TEMPERATURES[name])),
                backend_id,
            )
        deterministic = getattr(clock, "deterministic", False)
        return LLMGateway(
            backends,
            roles=roles,
            cost_sink=relay.cost,
            phase_provider=relay.phase,
            event_sink=relay.event,
            retries=int(self.raw.get("retries", 3)),
            backoff_s=0.0 if deterministic else float(self.raw.get("backoff_s", 1.0)),
            sleep=clock.sleep,
        )


@dataclass
class Runtime:
    config: AppConfig
    store: SessionStore
    clock: Clock
    gateway: LLMGateway
    provider: PaperSearchProvider
    coder: Coder
    relay: SinkRelay

    def bind(self, orchestrator: Orchestrator) -> None:
        self.relay.bind(orchestrator)


def build_runtime(config: AppConfig) -> Runtime:
    relay = SinkRelay()
    clock = config.build_clock()
    return Runtime(
        config=config,
        store=config.build_store(),
        clock=clock,
        gateway=config.build_gateway(relay, clock),
        provider=config.build_provider(),
        coder=config.build_coder(),
        relay=relay,
    )


def _resolve(base_dir: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base_dir / path).resolve()


def _auth_headers(spec: dict[str, Any]) -> dict[str, str]:
    """Backend credentials come from the environment, never the config file."""
    headers = dict(spec.get("headers", {}))
    env_var = spec.get("api_key_env")
    if env_var and os.environ.get(env_var):
        headers.setdefault("Authorization", f"Bearer {os.environ[env_var]}")
    return headers

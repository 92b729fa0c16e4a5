"""HTTP/JSON API consumed by the companion UI.

A plain WSGI app (testable in-process, no sockets) served with the
stdlib's threading WSGI server. One orchestrator per session; all session
mutations are serialized through a per-session lock, readers get folded
snapshots.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import uuid
from pathlib import Path
from socketserver import ThreadingMixIn
from typing import Any, Callable, Iterable
from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

from .config import AppConfig, ConfigError, build_runtime
from .domain import Critique, DomainError
from .orchestrator import GateClosed, IllegalTransition, Orchestrator, SessionSettings, UnknownTarget
from .store import CorruptLog, StoreUnavailable, UnknownSession
from .survey import ProviderUnavailable

logger = logging.getLogger(__name__)

MAX_ADVANCE_STEPS = 10_000


class SessionManager:
    """Builds, caches, and serializes access to per-session orchestrators."""

    def __init__(self, config: AppConfig):
        self.config = config
        self.store = config.build_store()
        self._orchestrators: dict[str, Orchestrator] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _build_orchestrator(self, session_id: str) -> Orchestrator:
        runtime = build_runtime(self.config)
        orchestrator = Orchestrator.resume(
            runtime.store,
            session_id,
            runtime.gateway,
            runtime.provider,
            runtime.coder,
            runtime.clock,
        )
        runtime.bind(orchestrator)
        return orchestrator

    def get(self, session_id: str) -> Orchestrator:
        with self._registry_lock:
            cached = self._orchestrators.get(session_id)
        if cached is not None:
            return cached
        if not self.store.exists(session_id):
            raise UnknownSession(session_id)
        orchestrator = self._build_orchestrator(session_id)
        with self._registry_lock:
            return self._orchestrators.setdefault(session_id, orchestrator)

    def create(
        self,
        task: dict[str, Any] | None,
        settings: dict[str, Any] | None = None,
        session_id: str | None = None,
    ) -> Orchestrator:
        session_id = session_id or f"s-{uuid.uuid4().hex[:10]}"
        runtime = build_runtime(self.config)
        task_spec = self.config.task
        if task is not None:
            from .domain import TaskSpec

            task_spec = TaskSpec.from_dict(task)
        if task_spec is None:
            raise ConfigError("session needs a task (inline or in the server config)")
        session_settings = self.config.settings
        if settings:
            merged = session_settings.to_dict()
            merged.update(settings)
            session_settings = SessionSettings.from_dict(merged)
        orchestrator = Orchestrator.create(
            runtime.store,
            session_id,
            task_spec,
            session_settings,
            runtime.gateway,
            runtime.provider,
            runtime.coder,
            runtime.clock,
        )
        runtime.bind(orchestrator)
        with self._registry_lock:
            self._orchestrators[session_id] = orchestrator
            self._locks.setdefault(session_id, threading.Lock())
        return orchestrator

    def advance(self, session_id: str, steps: int | str = 1) -> dict[str, Any]:
        orchestrator = self.get(session_id)
        with self._lock_for(session_id):
            if steps == "run":
                orchestrator.run_to_completion(MAX_ADVANCE_STEPS)
            else:
                for _ in range(int(steps)):
                    if orchestrator.view.terminal:
                        break
                    orchestrator.advance()
        return orchestrator.view.public_state()

    def feedback(
        self, session_id: str, gate_id: str, critiques: list[dict[str, Any]]
    ) -> dict[str, Any]:
        orchestrator = self.get(session_id)
        parsed = []
        for i, raw in enumerate(critiques):
            parsed.append(
                Critique(
                    id=raw.get("id") or f"human-{gate_id}-{i}",
                    source="human",
                    target_idea=raw["target_idea"],
                    text=raw["text"],
                    created_at=orchestrator.clock.iso(),
                )
            )
        with self._lock_for(session_id):
            return orchestrator.submit_feedback(gate_id, parsed)

    def events(self, session_id: str, since: int = 0) -> list[dict[str, Any]]:
        return [e.to_dict() for e in self.store.events(session_id, since=since)]


_ROUTES: list[tuple[str, re.Pattern[str], str]] = [
    ("POST", re.compile(r"^/sessions$"), "create"),
    ("GET", re.compile(r"^/sessions/([^/]+)$"), "state"),
    ("POST", re.compile(r"^/sessions/([^/]+)/advance$"), "advance"),
    ("GET", re.compile(r"^/sessions/([^/]+)/tree$"), "tree"),
    ("GET", re.compile(r"^/sessions/([^/]+)/events$"), "events"),
    ("GET", re.compile(r"^/sessions/([^/]+)/runs$"), "runs"),
    ("POST", re.compile(r"^/sessions/([^/]+)/feedback$"), "feedback"),
    ("GET", re.compile(r"^/sessions/([^/]+)/ledger$"), "ledger"),
    ("GET", re.compile(r"^/sessions$"), "list"),
]

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


def build_app(manager: SessionManager, ui_dir: str | Path | None = None) -> Callable:
    ui_root = Path(ui_dir).resolve() if ui_dir else None

    def app(environ: dict[str, Any], start_response: Callable) -> Iterable[bytes]:
        method = environ["REQUEST_METHOD"]
        path = environ.get("PATH_INFO", "/")
        if method == "OPTIONS":
            return _respond(start_response, 204, b"")
        try:
            for route_method, pattern, name in _ROUTES:
                match = pattern.match(path)
                if match and method == route_method:
                    payload = _handle(manager, name, match, environ)
                    return _respond_json(start_response, 200, payload)
            if method == "GET" and ui_root is not None:
                return _serve_static(start_response, ui_root, path)
            return _respond_json(start_response, 404, {"error": f"no route for {method} {path}"})
        except (UnknownSession, KeyError) as exc:
            return _respond_json(start_response, 404, {"error": f"not found: {exc}"})
        except GateClosed as exc:
            return _respond_json(start_response, 409, {"error": str(exc), "code": "GateClosed"})
        except IllegalTransition as exc:
            return _respond_json(start_response, 409, {"error": str(exc), "code": "IllegalTransition"})
        except (UnknownTarget, DomainError, ConfigError, ValueError) as exc:
            return _respond_json(start_response, 400, {"error": str(exc)})
        except (StoreUnavailable, CorruptLog, ProviderUnavailable) as exc:
            return _respond_json(start_response, 500, {"error": str(exc)})

    return app


def _handle(
    manager: SessionManager, name: str, match: re.Match[str], environ: dict[str, Any]
) -> Any:
    if name == "create":
        body = _read_json(environ)
        orchestrator = manager.create(
            body.get("task"), body.get("settings"), body.get("session_id")
        )
        return orchestrator.view.public_state()
    if name == "list":
        return {"sessions": manager.store.list_sessions()}
    session_id = match.group(1)
    if name == "state":
        return manager.get(session_id).view.public_state()
    if name == "advance":
        body = _read_json(environ)
        return manager.advance(session_id, body.get("steps", 1))
    if name == "tree":
        tree = manager.get(session_id).view.tree
        return tree or {"round": 0, "selected_frontier": [], "nodes": [], "edges": []}
    if name == "events":
        since = int(_query(environ).get("since", "0"))
        events = manager.events(session_id, since=since)
        return {"events": events, "last_seq": events[-1]["seq"] if events else since}
    if name == "runs":
        return {"runs": manager.get(session_id).view.runs}
    if name == "feedback":
        body = _read_json(environ)
        return manager.feedback(session_id, body["gate_id"], body.get("critiques", []))
    if name == "ledger":
        group_by = _query(environ).get("group_by", "role")
        return {
            "group_by": group_by,
            "totals": manager.store.ledger_total(session_id, group_by),
        }
    raise KeyError(name)


def _read_json(environ: dict[str, Any]) -> dict[str, Any]:
    length = int(environ.get("CONTENT_LENGTH") or 0)
    if length == 0:
        return {}
    raw = environ["wsgi.input"].read(length)
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON body: {exc}") from exc


def _query(environ: dict[str, Any]) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in environ.get("QUERY_STRING", "").split("&"):
        if "=" in part:
            key, value = part.split("=", 1)
            out[key] = value
    return out


_CORS = [
    ("Access-Control-Allow-Origin", "*"),
    ("Access-Control-Allow-Methods", "GET, POST, OPTIONS"),
    ("Access-Control-Allow-Headers", "Content-Type"),
]

_STATUS = {
    200: "200 OK",
    204: "204 No Content",
    400: "400 Bad Request",
    404: "404 Not Found",
    409: "409 Conflict",
    500: "500 Internal Server Error",
}


def _respond_json(start_response: Callable, status: int, payload: Any) -> Iterable[bytes]:
    body = json.dumps(payload).encode("utf-8")
    start_response(
        _STATUS[status],
        [("Content-Type", "application/json"), ("Content-Length", str(len(body)))] + _CORS,
    )
    return [body]


def _respond(start_response: Callable, status: int, body: bytes) -> Iterable[bytes]:
    start_response(_STATUS[status], [("Content-Length", str(len(body)))] + _CORS)
    return [body]


def _serve_static(start_response: Callable, ui_root: Path, path: str) -> Iterable[bytes]:
    rel = path.lstrip("/") or "index.html"
    target = (ui_root / rel).resolve()
    if not str(target).startswith(str(ui_root)) or not target.is_file():
        if (ui_root / "index.html").is_file() and "." not in rel:
            target = ui_root / "index.html"  # SPA fallback
        else:
            return _respond_json(start_response, 404, {"error": f"no asset {rel}"})
    body = target.read_bytes()
    content_type = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
    start_response(
        "200 OK",
        [("Content-Type", content_type), ("Content-Length", str(len(body)))] + _CORS,
    )
    return [body]


class _ThreadingWSGIServer(ThreadingMixIn, WSGIServer):
    daemon_threads = True


class _QuietHandler(WSGIRequestHandler):
    def log_message(self, format: str, *args: Any) -> None:
        logger.debug("http: " + format, *args)


def serve(
    manager: SessionManager,
    host: str = "127.0.0.1",
    port: int = 8765,
    ui_dir: str | Path | None = None,
):
    """Blocking server; returns the server object when constructed by tests."""
    server = make_server(
        host,
        port,
        build_app(manager, ui_dir),
        server_class=_ThreadingWSGIServer,
        handler_class=_QuietHandler,
    )
    return server

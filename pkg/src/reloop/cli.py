"""Operator entry point.

Thin adapters over the orchestrator and session store: create and drive
sessions, run fully offline against mocks, inspect artifacts, submit gate
feedback, and serve the HTTP API for the UI.

Exit codes: 0 success, 2 validation error, 3 session failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import demo as demo_module
from .config import AppConfig, ConfigError, Runtime, build_runtime
from .domain import Critique, DomainError, TaskSpec, validate_task
from .netguard import forbid_network
from .orchestrator import GateClosed, IllegalTransition, Orchestrator, UnknownTarget
from .store import CorruptLog, StoreUnavailable, UnknownSession
from .survey import ProviderUnavailable

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SESSION_FAILURE = 3

_PHASE_STOPS = {
    "survey": ("CodeReviewing",),
    "ideate": ("MethodBuilding",),
    "methodology": ("Planning",),
    "experiment": ("Reporting", "Done"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="session config JSON file")
    common.add_argument("--session", help="session id (overrides config)")
    common.add_argument("--store-dir", help="override the session store directory")
    common.add_argument(
        "--offline",
        action="store_true",
        help="force mock backends, the file-backed paper provider, and refuse network access",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="reloop",
        description="Closed-loop research orchestration engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", parents=[common], help="create a session from a task file")
    p_init.add_argument("--task", help="task JSON file (else the config's task)")

    sub.add_parser("run", parents=[common], help="advance a session to completion, honoring gates")
    sub.add_parser("resume", parents=[common], help="alias of run for an existing session")

    for name in _PHASE_STOPS:
        sub.add_parser(
            name, parents=[common], help=f"run the session up to the end of the {name} phase"
        )

    p_feedback = sub.add_parser(
        "feedback", parents=[common], help="submit a critique at an open gate"
    )
    p_feedback.add_argument("--gate", required=True)
    p_feedback.add_argument("--idea", required=True, action="append")
    p_feedback.add_argument("--text", required=True, action="append")

    sub.add_parser("status", parents=[common], help="print the session state")

    p_export = sub.add_parser(
        "export-tree", parents=[common], help="write the idea tree as JSON"
    )
    p_export.add_argument("--out", required=True)

    p_ledger = sub.add_parser("ledger", parents=[common], help="print cost totals")
    p_ledger.add_argument("--group-by", choices=("role", "phase"), default="role")

    p_serve = sub.add_parser(
        "serve", parents=[common], help="serve the HTTP API (and optional UI)"
    )
    p_serve.add_argument("--addr", default="127.0.0.1:8765")
    p_serve.add_argument("--ui", help="directory of built UI assets to serve")

    p_demo = sub.add_parser(
        "demo", parents=[common], help="materialize the offline demo workspace"
    )
    p_demo.add_argument("--dir", required=True)
    p_demo.add_argument("--seed", type=int, default=7)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (ConfigError, DomainError, GateClosed, UnknownTarget, UnknownSession) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (StoreUnavailable, CorruptLog, ProviderUnavailable, IllegalTransition) as exc:
        print(f"session error: {exc}", file=sys.stderr)
        return EXIT_SESSION_FAILURE


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "demo":
        config_path = demo_module.make_demo(args.dir, seed=args.seed)
        print(f"demo workspace ready: {config_path}")
        print(f"run it with: reloop run --offline --config {config_path}")
        return EXIT_OK

    config = _load_config(args)
    guard = forbid_network() if config.offline else contextlib.nullcontext()
    with guard:
        return _run_command(args, config)


def _load_config(args: argparse.Namespace) -> AppConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    config = AppConfig.load(args.config, offline_override=args.offline)
    if args.store_dir:
        config.store_dir = Path(args.store_dir).resolve()
    if args.session:
        config.session_id = args.session
    return config


def _run_command(args: argparse.Namespace, config: AppConfig) -> int:
    command = args.command
    if command == "init":
        orchestrator = _create_session(config, task_file=args.task)
        print(orchestrator.session_id)
        return EXIT_OK
    if command in ("run", "resume"):
        orchestrator = _obtain_session(config, allow_create=command == "run")
        return _drive(orchestrator, stop_phases=())
    if command in _PHASE_STOPS:
        orchestrator = _obtain_session(config, allow_create=True)
        return _drive(orchestrator, stop_phases=_PHASE_STOPS[command])
    if command == "feedback":
        if len(args.idea) != len(args.text):
            raise ConfigError("--idea and --text must be paired")
        orchestrator = _obtain_session(config, allow_create=False)
        critiques = [
            Critique(
                id=f"human-{args.gate}-{i}",
                source="human",
                target_idea=idea,
                text=text,
                created_at=orchestrator.clock.iso(),
            )
            for i, (idea, text) in enumerate(zip(args.idea, args.text))
        ]
        ack = orchestrator.submit_feedback(args.gate, critiques)
        print(json.dumps(ack))
        return EXIT_OK
    if command == "status":
        orchestrator = _obtain_session(config, allow_create=False)
        print(json.dumps(orchestrator.view.public_state(), indent=2))
        return EXIT_OK
    if command == "export-tree":
        orchestrator = _obtain_session(config, allow_create=False)
        tree = orchestrator.view.tree or {
            "round": 0,
            "selected_frontier": [],
            "nodes": [],
            "edges": [],
        }
        Path(args.out).write_text(json.dumps(tree, indent=1), encoding="utf-8")
        print(f"wrote {len(tree['nodes'])} nodes to {args.out}")
        return EXIT_OK
    if command == "ledger":
        orchestrator = _obtain_session(config, allow_create=False)
        totals = orchestrator.store.ledger_total(orchestrator.session_id, args.group_by)
        print(json.dumps({"group_by": args.group_by, "totals": totals}, indent=2))
        return EXIT_OK
    if command == "serve":
        return _serve(args, config)
    raise ConfigError(f"unknown command {command!r}")


def _session_id(config: AppConfig) -> str:
    if not config.session_id:
        raise ConfigError("no session id: set session_id in the config or pass --session")
    return config.session_id


def _create_session(config: AppConfig, task_file: str | None = None) -> Orchestrator:
    task = config.task
    if task_file:
        raw = json.loads(Path(task_file).read_text(encoding="utf-8"))
        if raw.get("baseline_path"):
            base = Path(task_file).resolve().parent
            path = Path(raw["baseline_path"])
            raw["baseline_path"] = str(path if path.is_absolute() else base / path)
        task = TaskSpec.from_dict(raw)
    if task is None:
        raise ConfigError("no task: pass --task or set task/task_file in the config")
    report = validate_task(task)
    if not report.ok:
        raise DomainError("invalid task: " + "; ".join(report.problems))
    runtime = build_runtime(config)
    orchestrator = Orchestrator.create(
        runtime.store,
        _session_id(config),
        task,
        config.settings,
        runtime.gateway,
        runtime.provider,
        runtime.coder,
        runtime.clock,
    )
    runtime.bind(orchestrator)
    return orchestrator


def _obtain_session(config: AppConfig, allow_create: bool) -> Orchestrator:
    runtime = build_runtime(config)
    session_id = _session_id(config)
    if runtime.store.exists(session_id):
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
    if not allow_create:
        raise UnknownSession(session_id)
    return _create_session(config)


def _drive(orchestrator: Orchestrator, stop_phases: tuple[str, ...]) -> int:
    last_phase = orchestrator.view.phase
    announced_gates: set[str] = set()
    print(f"session {orchestrator.session_id}: {last_phase}")
    while not orchestrator.view.terminal:
        if stop_phases and orchestrator.view.phase in stop_phases:
            break
        before_seq = orchestrator.view.last_seq
        orchestrator.advance()
        phase = orchestrator.view.phase
        if phase != last_phase:
            round_suffix = f" (round {orchestrator.view.round})" if phase == "Evolving" else ""
            print(f"-> {phase}{round_suffix}")
            last_phase = phase
        gate = orchestrator.view.pending_gate()
        if phase == "AwaitingFeedback" and gate and gate["gate_id"] not in announced_gates:
            announced_gates.add(gate["gate_id"])
            print(
                f"gate {gate['gate_id']} open for ideas {', '.join(gate['targets'])}; "
                f"submit with: reloop feedback --gate {gate['gate_id']} --idea <id> --text <critique>"
            )
        if phase == "AwaitingFeedback" and orchestrator.view.last_seq == before_seq:
            orchestrator.clock.sleep(0.2)
    if orchestrator.view.phase == "Failed":
        print(f"session failed: {orchestrator.view.cause}", file=sys.stderr)
        return EXIT_SESSION_FAILURE
    print(f"final phase: {orchestrator.view.phase}")
    return EXIT_OK


def _serve(args: argparse.Namespace, config: AppConfig) -> int:
    from .api import SessionManager, serve

    host, _, port = args.addr.partition(":")
    manager = SessionManager(config)
    server = serve(manager, host or "127.0.0.1", int(port or 8765), ui_dir=args.ui)
    print(f"serving on http://{host or '127.0.0.1'}:{port or 8765}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

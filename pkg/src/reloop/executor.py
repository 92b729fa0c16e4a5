"""Experiment execution: coder dispatch, the exception-guided debug cycle,
and staged adaptive evolution with per-stage metric feedback.

Runs happen in an isolated working copy of the baseline (never the
original). Each stage is snapshotted before patching so a regression can
be reverted to the exact pre-stage tree; committed stage deltas replay
onto a fresh baseline copy to reproduce the final tree.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import os
import re
import shlex
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .clocks import Clock, WallClock
from .codereview import BaselineAnalysis, CodeInventory
from .coders import Coder, CoderContractViolation, CoderFailure
from .domain import TaskSpec
from .gateway import GatewayError, LLMGateway
from .prompts import build_prompt

logger = logging.getLogger(__name__)

TAIL_CHARS = 4000
TIMEOUT_EXIT_CODE = 124  # sentinel; the process was killed at the deadline
METRIC_LINE = re.compile(r"^METRIC\s+(\S+)\s+(-?\d+(\.\d+)?)\s*$", re.MULTILINE)
ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "PYTHONPATH")
# Transient interpreter droppings are invisible to snapshots and hashes.
SNAPSHOT_IGNORE_DIRS = {"__pycache__", ".pytest_cache"}
STAGE_LEVELS = ("architectural", "algorithmic", "optimization")


class SandboxFailure(RuntimeError):
    pass


class InvalidPlan(RuntimeError):
    pass


@dataclass(frozen=True)
class DebugConfig:
    max_debug_attempts: int = 4
    max_runs_file_level: int = 5
    max_runs_repo_level: int = 3
    run_timeout_s: float = 600.0

    def __post_init__(self) -> None:
        for name in ("max_debug_attempts", "max_runs_file_level", "max_runs_repo_level"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def run_cap(self, coder_kind: str) -> int:
        return (
            self.max_runs_file_level
            if coder_kind == "file_level"
            else self.max_runs_repo_level
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DebugConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_debug_attempts": self.max_debug_attempts,
            "max_runs_file_level": self.max_runs_file_level,
            "max_runs_repo_level": self.max_runs_repo_level,
            "run_timeout_s": self.run_timeout_s,
        }


@dataclass(frozen=True)
class Stage:
    id: str
    description: str
    targets: tuple[str, ...]
    depends_on: tuple[str, ...] = ()
    level: str = "algorithmic"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "targets": list(self.targets),
            "depends_on": list(self.depends_on),
            "level": self.level,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Stage":
        return cls(
            id=str(d["id"]),
            description=d.get("description", ""),
            targets=tuple(d.get("targets", ())),
            depends_on=tuple(d.get("depends_on", ())),
            level=d.get("level", "algorithmic"),
        )


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StagePlan":
        return cls(tuple(Stage.from_dict(s) for s in d["stages"]))


@dataclass(frozen=True)
class DebugAttempt:
    attempt_index: int
    traceback_digest: str
    strategy: str
    patch_summary: str
    outcome: str  # "fixed" | "still_failing"

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempt_index": self.attempt_index,
            "traceback_digest": self.traceback_digest,
            "strategy": self.strategy,
            "patch_summary": self.patch_summary,
            "outcome": self.outcome,
        }


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    command: str
    exit_code: int
    stdout_tail: str
    stderr_tail: str
    wall_time_s: float
    stage_id: str | None = None
    metric_value: float | None = None
    debug_attempts: tuple[DebugAttempt, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_index": self.run_index,
            "stage_id": self.stage_id,
            "command": self.command,
            "exit_code": self.exit_code,
            "stdout_tail": self.stdout_tail,
            "stderr_tail": self.stderr_tail,
            "metric_value": self.metric_value,
            "wall_time_s": self.wall_time_s,
            "debug_attempts": [a.to_dict() for a in self.debug_attempts],
        }


@dataclass(frozen=True)
class PatchResult:
    changed_files: tuple[str, ...]
    diff_text: str
    # path -> (content before, content after); None marks absent.
    file_states: Mapping[str, tuple[bytes | None, bytes | None]]


@dataclass
class DebugOutcome:
    succeeded: bool
    attempts: tuple[DebugAttempt, ...]
    record: RunRecord


@dataclass(frozen=True)
class StageResult:
    stage_id: str
    status: str  # "committed" | "reverted" | "skipped_dependency" | "unexecuted"
    metric_value: float | None = None
    run_index: int | None = None
    debug_attempt_count: int = 0
    diff_text: str = ""
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage_id": self.stage_id,
            "status": self.status,
            "metric_value": self.metric_value,
            "run_index": self.run_index,
            "debug_attempt_count": self.debug_attempt_count,
            "detail": self.detail,
        }


@dataclass
class EvolutionReport:
    baseline_metric: float
    best_metric: float
    executions: int
    stage_results: tuple[StageResult, ...]
    committed: tuple[tuple[str, Mapping[str, tuple[bytes | None, bytes | None]]], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "baseline_metric": self.baseline_metric,
            "best_metric": self.best_metric,
            "executions": self.executions,
            "stage_results": [s.to_dict() for s in self.stage_results],
            "committed_stages": [sid for sid, _ in self.committed],
        }


# -- dispatch -----------------------------------------------------------------


def dispatch_coder(analysis: BaselineAnalysis) -> str:
    """file_level for simple baselines, repo_level otherwise."""
    if analysis.complexity not in ("file_level", "repo_level"):
        raise ValueError(f"complexity not set: {analysis.complexity!r}")
    return analysis.complexity


# -- workdir snapshots ----------------------------------------------------------


def _visible_files(workdir: Path) -> list[Path]:
    found = []
    for path in sorted(workdir.rglob("*")):
        if not path.is_file():
            continue
        rel_parts = path.relative_to(workdir).parts
        if any(part in SNAPSHOT_IGNORE_DIRS for part in rel_parts):
            continue
        if path.suffix == ".pyc":
            continue
        found.append(path)
    return found


def snapshot_tree(workdir: Path) -> dict[str, bytes]:
    return {
        p.relative_to(workdir).as_posix(): p.read_bytes() for p in _visible_files(workdir)
    }


def restore_tree(workdir: Path, snapshot: Mapping[str, bytes]) -> None:
    current = snapshot_tree(workdir)
    for rel in current:
        if rel not in snapshot:
            (workdir / rel).unlink()
    for rel, content in snapshot.items():
        target = workdir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        if current.get(rel) != content:
            target.write_bytes(content)


def tree_hash(workdir: Path) -> str:
    digest = hashlib.sha256()
    for rel, content in sorted(snapshot_tree(workdir).items()):
        digest.update(rel.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(hashlib.sha256(content).digest())
    return digest.hexdigest()


def diff_states(
    before: Mapping[str, bytes], after: Mapping[str, bytes]
) -> dict[str, tuple[bytes | None, bytes | None]]:
    states: dict[str, tuple[bytes | None, bytes | None]] = {}
    for rel in sorted(set(before) | set(after)):
        old, new = before.get(rel), after.get(rel)
        if old != new:
            states[rel] = (old, new)
    return states


def render_diff(states: Mapping[str, tuple[bytes | None, bytes | None]]) -> str:
    chunks = []
    for rel, (old, new) in sorted(states.items()):
        old_lines = old.decode("utf-8", "replace").splitlines(keepends=True) if old else []
        new_lines = new.decode("utf-8", "replace").splitlines(keepends=True) if new else []
        chunks.append(
            "".join(
                difflib.unified_diff(
                    old_lines, new_lines, fromfile=f"a/{rel}", tofile=f"b/{rel}"
                )
            )
        )
    return "\n".join(c for c in chunks if c)


def apply_states(
    workdir: Path, states: Mapping[str, tuple[bytes | None, bytes | None]]
) -> None:
    """Apply the after-side of a recorded delta (used for replays)."""
    for rel, (_, after) in sorted(states.items()):
        target = workdir / rel
        if after is None:
            if target.exists():
                target.unlink()
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(after)


# -- patching -------------------------------------------------------------------


def apply_patch(
    coder_kind: str,
    coder: Coder,
    workdir: Path,
    instruction: str,
    files_hint: Sequence[str] = (),
) -> PatchResult:
    """Run the coder and diff the tree around it.

    A file-level coder may touch only the files named in the instruction;
    an empty diff when changes were requested is a failure.
    """
    before = snapshot_tree(workdir)
    coder.invoke(workdir, instruction, files_hint)
    after = snapshot_tree(workdir)
    states = diff_states(before, after)
    if not states:
        raise CoderFailure("coder produced an empty diff")
    if coder_kind == "file_level":
        allowed = set(files_hint)
        stray = [rel for rel in states if rel not in allowed]
        if stray:
            restore_tree(workdir, before)
            raise CoderContractViolation(
                f"file-level coder touched files outside instruction scope: {stray}"
            )
    return PatchResult(
        changed_files=tuple(sorted(states)),
        diff_text=render_diff(states),
        file_states=states,
    )


# -- execution --------------------------------------------------------------------


def resolve_command(template: str) -> str:
    return template.replace("{python}", sys.executable)


def execute(
    workdir: Path,
    task: TaskSpec,
    cfg: DebugConfig,
    run_index: int = 0,
    stage_id: str | None = None,
    clock: Clock | None = None,
    env_extra: Mapping[str, str] | None = None,
    log_sink: Callable[[RunRecord, bytes, bytes], None] | None = None,
) -> RunRecord:
    """One sandboxed run with captured streams and metric extraction."""
    clock = clock or WallClock()
    command = resolve_command(task.run_command)
    env = {k: os.environ[k] for k in ENV_ALLOWLIST if k in os.environ}
    env["PYTHONIOENCODING"] = "utf-8"
    env.update(env_extra or {})
    started = clock.now()
    try:
        process = subprocess.Popen(
            shlex.split(command),
            cwd=workdir,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            env=env,
        )
    except OSError as exc:
        raise SandboxFailure(f"could not spawn {command!r}: {exc}") from exc
    timed_out = False
    try:
        stdout, stderr = process.communicate(timeout=cfg.run_timeout_s)
    except subprocess.TimeoutExpired:
        timed_out = True
        process.kill()
        stdout, stderr = process.communicate()
    wall_time = max(0.0, clock.now() - started)
    exit_code = TIMEOUT_EXIT_CODE if timed_out else process.returncode
    stdout_text = stdout.decode("utf-8", "replace")
    stderr_text = stderr.decode("utf-8", "replace")
    metric = None
    if exit_code == 0:
        metric = _extract_metric(task, workdir, stdout_text)
    record = RunRecord(
        run_index=run_index,
        stage_id=stage_id,
        command=command,
        exit_code=exit_code,
        stdout_tail=stdout_text[-TAIL_CHARS:],
        stderr_tail=stderr_text[-TAIL_CHARS:],
        metric_value=metric,
        wall_time_s=round(wall_time, 3),
    )
    if log_sink is not None:
        log_sink(record, stdout, stderr)
    return record


def _extract_metric(task: TaskSpec, workdir: Path, stdout_text: str) -> float | None:
    contract = task.metric
    if contract.source == "stdout":
        value = None
        for match in METRIC_LINE.finditer(stdout_text):
            if match.group(1) == contract.name:
                value = float(match.group(2))
        return value
    metrics_file = workdir / (contract.metrics_path or "")
    if not metrics_file.exists():
        return None
    try:
        payload = json.loads(metrics_file.read_text(encoding="utf-8"))
        raw = payload[contract.name]
        return float(raw)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None


# -- the debug cycle -----------------------------------------------------------------


_TRACEBACK_FILE = re.compile(r'File "([^"]+)"')


def _traceback_digest(stderr_tail: str) -> str:
    lines = [l for l in stderr_tail.strip().splitlines() if l.strip()]
    return "\n".join(lines[-3:]) if lines else "process failed without stderr"


def _implicated_files(stderr_tail: str, workdir: Path, inventory: CodeInventory) -> list[str]:
    known = set(inventory.paths())
    implicated: list[str] = []
    for raw in _TRACEBACK_FILE.findall(stderr_tail):
        path = Path(raw)
        if path.is_absolute():
            try:
                rel = path.resolve().relative_to(workdir.resolve()).as_posix()
            except ValueError:
                continue
        else:
            rel = path.as_posix()
        if rel in known and rel not in implicated:
            implicated.append(rel)
    return implicated


def debug_cycle(
    workdir: Path,
    task: TaskSpec,
    cfg: DebugConfig,
    coder_kind: str,
    coder: Coder,
    gateway: LLMGateway,
    inventory: CodeInventory,
    events: Callable[[str, dict[str, Any]], Any] | None = None,
    clock: Clock | None = None,
    record_run: Callable[[RunRecord], None] | None = None,
    run_index: int = 0,
) -> DebugOutcome:
    """execute -> capture -> contextualize -> strategize -> patch, bounded
    by max_debug_attempts."""
    emit = events or (lambda kind, payload: None)
    note_run = record_run or (lambda record: None)
    record = execute(workdir, task, cfg, run_index=run_index, clock=clock)
    note_run(record)
    attempts: list[DebugAttempt] = []
    while record.exit_code != 0 and len(attempts) < cfg.max_debug_attempts:
        digest = _traceback_digest(record.stderr_tail)
        implicated = _implicated_files(record.stderr_tail, workdir, inventory)
        context_files = list(implicated)
        for path in implicated:
            for neighbor in sorted(inventory.neighbors(path)):
                if neighbor not in context_files:
                    context_files.append(neighbor)
        strategy = _ask_strategy(gateway, digest, implicated, context_files, inventory, emit)
        files_hint = implicated or inventory.paths()[:1]
        try:
            patch = apply_patch(
                coder_kind,
                coder,
                workdir,
                instruction=f"{strategy}\nFiles: {', '.join(files_hint)}",
                files_hint=files_hint,
            )
            patch_summary = f"changed {', '.join(patch.changed_files)}"
        except (CoderFailure, CoderContractViolation) as exc:
            patch_summary = f"patch failed: {exc}"
            emit("warning", {"code": "debug_patch_failed", "detail": str(exc)})
        run_index += 1
        record = execute(workdir, task, cfg, run_index=run_index, clock=clock)
        note_run(record)
        outcome = "fixed" if record.exit_code == 0 else "still_failing"
        attempts.append(
            DebugAttempt(len(attempts) + 1, digest, strategy, patch_summary, outcome)
        )
    final = RunRecord(
        run_index=record.run_index,
        stage_id=record.stage_id,
        command=record.command,
        exit_code=record.exit_code,
        stdout_tail=record.stdout_tail,
        stderr_tail=record.stderr_tail,
        metric_value=record.metric_value,
        wall_time_s=record.wall_time_s,
        debug_attempts=tuple(attempts),
    )
    return DebugOutcome(
        succeeded=record.exit_code == 0, attempts=tuple(attempts), record=final
    )


def _ask_strategy(
    gateway: LLMGateway,
    digest: str,
    implicated: Sequence[str],
    context_files: Sequence[str],
    inventory: CodeInventory,
    emit: Callable[[str, dict[str, Any]], Any],
) -> str:
    symbol_lines = []
    for path in context_files:
        entry = inventory.file(path)
        if entry:
            symbol_lines.extend(f"{path}: {s.signature_text}" for s in entry.top_level_symbols)
    prompt = build_prompt(
        "debug-strategy",
        {
            "traceback_digest": digest,
            "implicated_files": "\n".join(implicated),
            "context_symbols": "\n".join(symbol_lines),
        },
    )
    try:
        return gateway.complete("debugger", prompt).text
    except GatewayError as exc:
        emit("warning", {"code": "debug_strategy_failed", "detail": str(exc)})
        return "Re-inspect the failing call and correct the immediate cause."


# -- planning ----------------------------------------------------------------------


def validate_plan(plan: StagePlan, inventory: CodeInventory) -> list[str]:
    problems: list[str] = []
    if not plan.stages:
        problems.append("plan has no stages")
    seen: set[str] = set()
    known_files = set(inventory.paths())
    for stage in plan.stages:
        if stage.id in seen:
            problems.append(f"duplicate stage id {stage.id}")
        for dep in stage.depends_on:
            if dep not in seen:
                problems.append(f"stage {stage.id} depends on {dep} which does not precede it")
        seen.add(stage.id)
        if stage.level not in STAGE_LEVELS:
            problems.append(f"stage {stage.id} has unknown level {stage.level!r}")
        if not stage.targets:
            problems.append(f"stage {stage.id} has no targets")
        for target in stage.targets:
            if target not in known_files:
                problems.append(f"stage {stage.id} targets unknown file {target}")
    return problems


def plan_stages(
    methodology_text: str,
    analysis: BaselineAnalysis,
    gateway: LLMGateway,
) -> StagePlan:
    """Staged implementation plan; one repair re-ask before InvalidPlan."""
    prompt = build_prompt(
        "plan-stages",
        {
            "methodology": methodology_text,
            "files": "\n".join(analysis.inventory.paths()),
            "repo_summary": analysis.repo_summary,
        },
        respond_with='{"stages": [{"id", "description", "targets", "depends_on", "level"}]}',
    )
    reply = gateway.complete_structured(
        "coder", prompt, {"stages": "list"}, validator=_stages_shape_validator
    )
    plan = StagePlan.from_dict(reply)
    problems = validate_plan(plan, analysis.inventory)
    if not problems:
        return plan
    repair = (
        f"{prompt}\n### repair\nThe previous plan was invalid: {'; '.join(problems)}. "
        f"Return a corrected JSON plan."
    )
    reply = gateway.complete_structured(
        "coder", repair, {"stages": "list"}, validator=_stages_shape_validator
    )
    plan = StagePlan.from_dict(reply)
    problems = validate_plan(plan, analysis.inventory)
    if problems:
        raise InvalidPlan("; ".join(problems))
    return plan


def _stages_shape_validator(parsed: dict[str, Any]) -> str | None:
    stages = parsed.get("stages")
    if not isinstance(stages, list) or not stages:
        return "stages must be a non-empty list"
    for stage in stages:
        if not isinstance(stage, dict) or "id" not in stage:
            return "each stage must be an object with an id"
    return None


# -- adaptive evolution ----------------------------------------------------------------


def adaptive_evolve(
    plan: StagePlan,
    workdir: Path,
    task: TaskSpec,
    cfg: DebugConfig,
    coder_kind: str,
    coder: Coder,
    gateway: LLMGateway,
    inventory: CodeInventory,
    baseline_record: RunRecord,
    events: Callable[[str, dict[str, Any]], Any] | None = None,
    clock: Clock | None = None,
    record_run: Callable[[RunRecord], None] | None = None,
) -> EvolutionReport:
    """Execute stages in order; commit improvements, revert regressions,
    skip dependents of failed stages, and stop at the coder-kind run cap.

    Only full performance runs count against the cap; debug-cycle probe
    runs are excluded.
    """
    if baseline_record.metric_value is None:
        raise ValueError("baseline run has no metric; adaptive evolution needs a reference")
    emit = events or (lambda kind, payload: None)
    run_cap = cfg.run_cap(coder_kind)
    best = baseline_record.metric_value
    executions = 0
    run_index = baseline_record.run_index
    failed: set[str] = set()
    results: list[StageResult] = []
    committed: list[tuple[str, Mapping[str, tuple[bytes | None, bytes | None]]]] = []

    for stage in plan.stages:
        blocked = [dep for dep in stage.depends_on if dep in failed]
        if blocked:
            results.append(
                StageResult(stage.id, "skipped_dependency", detail=f"depends on failed {blocked}")
            )
            failed.add(stage.id)  # dependents of a skipped stage are blocked too
            emit("stage_result", results[-1].to_dict())
            continue
        if executions >= run_cap:
            results.append(
                StageResult(stage.id, "unexecuted", detail=f"run cap {run_cap} reached")
            )
            emit("stage_result", results[-1].to_dict())
            continue

        snapshot = snapshot_tree(workdir)
        instruction = (
            f"Implement {stage.id} ({stage.level}): {stage.description}\n"
            f"Targets: {', '.join(stage.targets)}"
        )
        try:
            apply_patch(coder_kind, coder, workdir, instruction, files_hint=stage.targets)
        except (CoderFailure, CoderContractViolation) as exc:
            restore_tree(workdir, snapshot)
            failed.add(stage.id)
            results.append(StageResult(stage.id, "reverted", detail=f"patch failed: {exc}"))
            emit("stage_result", results[-1].to_dict())
            continue

        debug = debug_cycle(
            workdir,
            task,
            cfg,
            coder_kind,
            coder,
            gateway,
            inventory,
            events=events,
            clock=clock,
            record_run=record_run,
            run_index=run_index + 1,
        )
        run_index = debug.record.run_index
        if not debug.succeeded:
            restore_tree(workdir, snapshot)
            failed.add(stage.id)
            results.append(
                StageResult(
                    stage.id,
                    "reverted",
                    debug_attempt_count=len(debug.attempts),
                    detail="debug cycle exhausted",
                )
            )
            emit("stage_result", results[-1].to_dict())
            continue

        executions += 1
        run_index += 1
        record = execute(
            workdir, task, cfg, run_index=run_index, stage_id=stage.id, clock=clock
        )
        if record_run is not None:
            record_run(record)
        metric = record.metric_value
        if metric is not None and task.metric.better(metric, best):
            delta = diff_states(snapshot, snapshot_tree(workdir))
            committed.append((stage.id, delta))
            best = metric
            results.append(
                StageResult(
                    stage.id,
                    "committed",
                    metric_value=metric,
                    run_index=record.run_index,
                    debug_attempt_count=len(debug.attempts),
                    diff_text=render_diff(delta),
                )
            )
        else:
            restore_tree(workdir, snapshot)
            failed.add(stage.id)
            results.append(
                StageResult(
                    stage.id,
                    "reverted",
                    metric_value=metric,
                    run_index=record.run_index,
                    debug_attempt_count=len(debug.attempts),
                    detail="no improvement" if metric is not None else "no metric extracted",
                )
            )
        emit("stage_result", results[-1].to_dict())

    return EvolutionReport(
        baseline_metric=baseline_record.metric_value,
        best_metric=best,
        executions=executions,
        stage_results=tuple(results),
        committed=tuple(committed),
    )


def replay_committed(
    baseline_copy: Path,
    committed: Sequence[tuple[str, Mapping[str, tuple[bytes | None, bytes | None]]]],
) -> None:
    """Apply committed stage deltas in order onto a fresh baseline copy."""
    for _, states in committed:
        apply_states(baseline_copy, states)

"""Coder adapters: scriptable stub for offline runs, subprocess for real tools.

A coder mutates a working copy of the baseline according to an
instruction; the executor diffs the tree around the call, so adapters only
need to perform edits.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence


class CoderFailure(RuntimeError):
    """Coder exited abnormally or produced no change when one was requested."""


class CoderContractViolation(RuntimeError):
    """A file-level coder touched files outside the instruction's scope."""


class Coder(Protocol):
    def invoke(
        self, workdir: Path, instruction: str, files_hint: Sequence[str]
    ) -> None: ...


@dataclass
class StubRule:
    """Edit script entry matched by instruction substring.

    actions: write (replace file content), append, delete, fail (raise),
    noop (change nothing).
    """

    contains: str
    edits: list[dict[str, Any]] = field(default_factory=list)
    once: bool = False
    _used: int = field(default=0, repr=False)

    def matches(self, instruction: str) -> bool:
        if self.contains not in instruction:
            return False
        return not (self.once and self._used > 0)


class StubCoder:
    """Deterministic scripted coder for tests and offline sessions."""

    def __init__(self, rules: Sequence[StubRule] = ()):
        self.rules = list(rules)
        self.invocations: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "StubCoder":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            [
                StubRule(
                    contains=entry["contains"],
                    edits=list(entry.get("edits", [])),
                    once=bool(entry.get("once", False)),
                )
                for entry in raw
            ]
        )

    def invoke(
        self, workdir: Path, instruction: str, files_hint: Sequence[str]
    ) -> None:
        self.invocations.append(instruction)
        for rule in self.rules:
            if not rule.matches(instruction):
                continue
            rule._used += 1
            for edit in rule.edits:
                action = edit.get("action", "write")
                if action == "fail":
                    raise CoderFailure(edit.get("message", "scripted coder failure"))
                if action == "noop":
                    continue
                target = workdir / edit["path"]
                if action == "delete":
                    if target.exists():
                        target.unlink()
                    continue
                target.parent.mkdir(parents=True, exist_ok=True)
                content = edit.get("content", "")
                if action == "append":
                    existing = target.read_text(encoding="utf-8") if target.exists() else ""
                    target.write_text(existing + content, encoding="utf-8")
                else:
                    target.write_text(content, encoding="utf-8")
            return
        # No matching rule: leave the tree untouched; the executor will
        # surface this as an empty diff.


@dataclass
class SubprocessCoder:
    """Shells out to an external coding tool.

    The command template may use {workdir}, {instruction_file}, and
    {files}; a non-zero exit is a CoderFailure.
    """

    command_template: str
    timeout_s: float = 600.0

    def invoke(
        self, workdir: Path, instruction: str, files_hint: Sequence[str]
    ) -> None:
        with tempfile.NamedTemporaryFile(
            "w", suffix=".txt", delete=False, encoding="utf-8"
        ) as handle:
            handle.write(instruction)
            instruction_file = handle.name
        command = self.command_template.format(
            workdir=shlex.quote(str(workdir)),
            instruction_file=shlex.quote(instruction_file),
            files=" ".join(shlex.quote(f) for f in files_hint),
        )
        try:
            result = subprocess.run(
                shlex.split(command),
                cwd=workdir,
                capture_output=True,
                timeout=self.timeout_s,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise CoderFailure(f"coder process failed: {exc}") from exc
        if result.returncode != 0:
            tail = result.stderr.decode("utf-8", "replace")[-500:]
            raise CoderFailure(f"coder exited {result.returncode}: {tail}")

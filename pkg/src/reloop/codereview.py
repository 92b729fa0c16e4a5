"""Baseline code analysis: structural inventory plus model-written summaries.

The structural pass is purely syntactic (Python via ``ast``; other
languages get per-extension extractors or line counts only) and never
executes the code under review. Summaries go through the reviewer role,
one call per file plus one for the repository.
"""

from __future__ import annotations

import ast
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

from .gateway import GatewayError, LLMGateway
from .prompts import build_prompt

logger = logging.getLogger(__name__)

SUMMARY_WIDTH = 4
REPO_LEVEL_LINE_THRESHOLD = 1500

LANGUAGE_TAGS = {
    ".py": "python",
    ".sh": "shell",
    ".js": "javascript",
    ".ts": "typescript",
    ".c": "c",
    ".h": "c",
    ".cpp": "cpp",
    ".rs": "rust",
    ".java": "java",
    ".r": "r",
    ".jl": "julia",
}


@dataclass(frozen=True)
class Symbol:
    kind: str  # "function" | "class" | "other"
    name: str
    signature_text: str
    span: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "name": self.name,
            "signature_text": self.signature_text,
            "span": list(self.span),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Symbol":
        return cls(d["kind"], d["name"], d["signature_text"], tuple(d["span"]))


@dataclass(frozen=True)
class FileEntry:
    path: str
    language_tag: str
    line_count: int
    top_level_symbols: tuple[Symbol, ...] = ()
    error: str | None = None  # unreadable/unparsable files keep their slot

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": self.path,
            "language_tag": self.language_tag,
            "line_count": self.line_count,
            "top_level_symbols": [s.to_dict() for s in self.top_level_symbols],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FileEntry":
        return cls(
            path=d["path"],
            language_tag=d["language_tag"],
            line_count=d["line_count"],
            top_level_symbols=tuple(Symbol.from_dict(s) for s in d.get("top_level_symbols", ())),
            error=d.get("error"),
        )


@dataclass(frozen=True)
class CodeInventory:
    root: str
    files: tuple[FileEntry, ...]
    dependency_edges: tuple[tuple[str, str], ...]

    def paths(self) -> list[str]:
        return [f.path for f in self.files]

    def file(self, path: str) -> FileEntry | None:
        for entry in self.files:
            if entry.path == path:
                return entry
        return None

    def neighbors(self, path: str) -> set[str]:
        """Direct dependency neighbors (both directions)."""
        out: set[str] = set()
        for importer, imported in self.dependency_edges:
            if importer == path:
                out.add(imported)
            if imported == path:
                out.add(importer)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "root": self.root,
            "files": [f.to_dict() for f in self.files],
            "dependency_edges": [list(e) for e in self.dependency_edges],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CodeInventory":
        return cls(
            root=d["root"],
            files=tuple(FileEntry.from_dict(f) for f in d["files"]),
            dependency_edges=tuple((a, b) for a, b in d["dependency_edges"]),
        )


@dataclass(frozen=True)
class BaselineAnalysis:
    inventory: CodeInventory
    file_summaries: Mapping[str, str]
    repo_summary: str
    entry_points: tuple[str, ...]
    complexity: str  # "file_level" | "repo_level"

    def to_dict(self) -> dict[str, Any]:
        return {
            "inventory": self.inventory.to_dict(),
            "file_summaries": dict(self.file_summaries),
            "repo_summary": self.repo_summary,
            "entry_points": list(self.entry_points),
            "complexity": self.complexity,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BaselineAnalysis":
        return cls(
            inventory=CodeInventory.from_dict(d["inventory"]),
            file_summaries=dict(d["file_summaries"]),
            repo_summary=d["repo_summary"],
            entry_points=tuple(d["entry_points"]),
            complexity=d["complexity"],
        )


def complexity_of(inventory: CodeInventory) -> str:
    """repo_level iff multiple source files, or one file over the line cap."""
    if len(inventory.files) > 1:
        return "repo_level"
    if inventory.files and inventory.files[0].line_count > REPO_LEVEL_LINE_THRESHOLD:
        return "repo_level"
    return "file_level"


def _python_symbols(source: str) -> tuple[Symbol, ...]:
    tree = ast.parse(source)
    symbols: list[Symbol] = []
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            signature = f"def {node.name}({ast.unparse(node.args)})"
            symbols.append(
                Symbol("function", node.name, signature, (node.lineno, node.end_lineno or node.lineno))
            )
        elif isinstance(node, ast.ClassDef):
            bases = ", ".join(ast.unparse(b) for b in node.bases)
            signature = f"class {node.name}({bases})" if bases else f"class {node.name}"
            symbols.append(
                Symbol("class", node.name, signature, (node.lineno, node.end_lineno or node.lineno))
            )
        elif isinstance(node, ast.Assign):
            for target in node.targets:
                if isinstance(target, ast.Name):
                    symbols.append(
                        Symbol(
                            "other",
                            target.id,
                            f"{target.id} = ...",
                            (node.lineno, node.end_lineno or node.lineno),
                        )
                    )
    return tuple(symbols)


def _python_imports(source: str, importer: str) -> list[str]:
    """Imported module dotted names, with relative imports resolved."""
    tree = ast.parse(source)
    package_parts = Path(importer).parent.parts
    names: list[str] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names.extend(alias.name for alias in node.names)
        elif isinstance(node, ast.ImportFrom):
            if node.level == 0:
                if node.module:
                    names.append(node.module)
                    names.extend(f"{node.module}.{a.name}" for a in node.names)
            else:
                base = package_parts[: len(package_parts) - (node.level - 1)]
                prefix = ".".join(base)
                if node.module:
                    prefix = f"{prefix}.{node.module}" if prefix else node.module
                if prefix:
                    names.append(prefix)
                names.extend(f"{prefix}.{a.name}" if prefix else a.name for a in node.names)
    return names


def build_inventory(root: str | Path) -> CodeInventory:
    """Deterministic structural inventory of the source tree under ``root``."""
    root_path = Path(root)
    if not root_path.is_dir():
        raise ValueError(f"baseline root not found: {root}")
    entries: list[FileEntry] = []
    sources: dict[str, str] = {}
    for path in sorted(root_path.rglob("*")):
        if not path.is_file():
            continue
        tag = LANGUAGE_TAGS.get(path.suffix.lower())
        if tag is None:
            continue
        rel = path.relative_to(root_path).as_posix()
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            entries.append(FileEntry(rel, tag, 0, (), error=f"unreadable: {exc}"))
            continue
        line_count = len(text.splitlines())
        symbols: tuple[Symbol, ...] = ()
        error = None
        if tag == "python":
            try:
                symbols = _python_symbols(text)
                sources[rel] = text
            except SyntaxError as exc:
                error = f"unparsable: {exc.msg} (line {exc.lineno})"
        entries.append(FileEntry(rel, tag, line_count, symbols, error=error))
    if not entries:
        raise ValueError(f"no source files under {root}")

    # Map dotted module names to files under root so imports resolve to edges.
    module_to_file: dict[str, str] = {}
    for entry in entries:
        if entry.language_tag != "python":
            continue
        parts = Path(entry.path).with_suffix("").parts
        if parts[-1] == "__init__":
            parts = parts[:-1]
        if parts:
            module_to_file[".".join(parts)] = entry.path
    edges: set[tuple[str, str]] = set()
    for rel, text in sources.items():
        for name in _python_imports(text, rel):
            target = module_to_file.get(name)
            if target and target != rel:
                edges.add((rel, target))
    return CodeInventory(
        root=str(root_path),
        files=tuple(entries),
        dependency_edges=tuple(sorted(edges)),
    )


def summarize(
    inventory: CodeInventory,
    gateway: LLMGateway,
    events: Callable[[str, dict[str, Any]], Any] | None = None,
    parallel_width: int = SUMMARY_WIDTH,
) -> BaselineAnalysis:
    """Model-written file and repository summaries over the inventory."""
    if not inventory.files:
        raise ValueError("inventory is empty")
    emit = events or (lambda kind, payload: None)
    root = Path(inventory.root)

    def summarize_file(entry: FileEntry) -> str:
        prompt = build_prompt(
            "summarize-file",
            {
                "path": entry.path,
                "language": entry.language_tag,
                "symbols": "\n".join(s.signature_text for s in entry.top_level_symbols),
                "head": _file_head(root / entry.path),
            },
        )
        try:
            return gateway.complete("reviewer", prompt).text
        except GatewayError as exc:
            emit("warning", {"code": "summary_failed", "path": entry.path, "detail": str(exc)})
            return "[unavailable]"

    with ThreadPoolExecutor(max_workers=max(1, parallel_width)) as pool:
        summaries = list(pool.map(summarize_file, inventory.files))
    file_summaries = {e.path: s for e, s in zip(inventory.files, summaries)}

    repo_prompt = build_prompt(
        "summarize-repo",
        {
            "files": "\n".join(inventory.paths()),
            "edges": "\n".join(f"{a} -> {b}" for a, b in inventory.dependency_edges),
        },
    )
    try:
        repo_summary = gateway.complete("reviewer", repo_prompt).text
    except GatewayError as exc:
        emit("warning", {"code": "summary_failed", "path": "<repo>", "detail": str(exc)})
        repo_summary = "[unavailable]"

    return BaselineAnalysis(
        inventory=inventory,
        file_summaries=file_summaries,
        repo_summary=repo_summary,
        entry_points=_entry_points(inventory, root),
        complexity=complexity_of(inventory),
    )


def _file_head(path: Path, lines: int = 30) -> str:
    try:
        return "\n".join(path.read_text(encoding="utf-8").splitlines()[:lines])
    except (OSError, UnicodeDecodeError):
        return ""


def _entry_points(inventory: CodeInventory, root: Path) -> tuple[str, ...]:
    found: list[str] = []
    for entry in inventory.files:
        if entry.language_tag != "python":
            continue
        try:
            text = (root / entry.path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError):
            continue
        if "__main__" in text:
            found.append(entry.path)
    if not found and len(inventory.files) == 1:
        found.append(inventory.files[0].path)
    return tuple(found)

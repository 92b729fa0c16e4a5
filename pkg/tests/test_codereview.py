from __future__ import annotations

import random

import pytest

from reloop.codereview import (
    BaselineAnalysis,
    CodeInventory,
    FileEntry,
    build_inventory,
    complexity_of,
    summarize,
)
from reloop.mockllm import ScriptRule

from .conftest import EventCollector, make_gateway


def test_single_file_two_functions(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "solo.py").write_text(
        "def train(epochs, lr=0.1):\n    return epochs\n\n\ndef evaluate(model):\n    return 0.5\n",
        encoding="utf-8",
    )
    inventory = build_inventory(root)
    assert len(inventory.files) == 1
    symbols = inventory.files[0].top_level_symbols
    assert [s.name for s in symbols] == ["train", "evaluate"]
    assert symbols[0].kind == "function"
    assert "train(epochs, lr=0.1)" in symbols[0].signature_text
    assert inventory.dependency_edges == ()


def test_import_edge_between_files(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "b.py").write_text("VALUE = 3\n", encoding="utf-8")
    (root / "a.py").write_text("import b\n\nprint(b.VALUE)\n", encoding="utf-8")
    inventory = build_inventory(root)
    assert ("a.py", "b.py") in inventory.dependency_edges


def test_relative_import_edge(tmp_path):
    root = tmp_path / "repo"
    (root / "pkg").mkdir(parents=True)
    (root / "pkg" / "__init__.py").write_text("", encoding="utf-8")
    (root / "pkg" / "core.py").write_text("X = 1\n", encoding="utf-8")
    (root / "pkg" / "app.py").write_text("from . import core\n", encoding="utf-8")
    inventory = build_inventory(root)
    assert ("pkg/app.py", "pkg/core.py") in inventory.dependency_edges


def test_empty_directory_is_a_precondition_error(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        build_inventory(empty)
    with pytest.raises(ValueError):
        build_inventory(tmp_path / "missing")


def test_unparsable_file_recorded_not_fatal(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "bad.py").write_text("def broken(:\n", encoding="utf-8")
    (root / "good.py").write_text("def fine():\n    pass\n", encoding="utf-8")
    inventory = build_inventory(root)
    bad = inventory.file("bad.py")
    assert bad is not None and bad.error and "unparsable" in bad.error
    assert bad.top_level_symbols == ()
    assert inventory.file("good.py").top_level_symbols


def test_inventory_is_idempotent(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "m.py").write_text("class Model:\n    pass\n", encoding="utf-8")
    (root / "util.py").write_text("def helper():\n    return 1\n", encoding="utf-8")
    assert build_inventory(root) == build_inventory(root)


def test_edges_only_under_root(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "a.py").write_text("import os\nimport json\n", encoding="utf-8")
    inventory = build_inventory(root)
    assert inventory.dependency_edges == ()


def _entry(path: str, lines: int) -> FileEntry:
    return FileEntry(path=path, language_tag="python", line_count=lines)


def test_complexity_rule_fixed_cases():
    one_small = CodeInventory(root="r", files=(_entry("a.py", 200),), dependency_edges=())
    assert complexity_of(one_small) == "file_level"
    three = CodeInventory(
        root="r",
        files=(_entry("a.py", 10), _entry("b.py", 10), _entry("c.py", 10)),
        dependency_edges=(),
    )
    assert complexity_of(three) == "repo_level"
    one_big = CodeInventory(root="r", files=(_entry("a.py", 2000),), dependency_edges=())
    assert complexity_of(one_big) == "repo_level"


def test_complexity_is_pure_function_of_inventory():
    rng = random.Random(9)
    for _ in range(200):
        count = rng.randint(1, 5)
        files = tuple(_entry(f"f{i}.py", rng.randint(1, 3000)) for i in range(count))
        inventory = CodeInventory(root="r", files=files, dependency_edges=())
        expected = (
            "repo_level"
            if (count > 1 or files[0].line_count > 1500)
            else "file_level"
        )
        assert complexity_of(inventory) == expected


def test_summarize_issues_k_plus_one_calls(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    for name in ("a.py", "b.py", "c.py"):
        (root / name).write_text(f"def {name[0]}():\n    pass\n", encoding="utf-8")
    inventory = build_inventory(root)
    gateway, costs, _ = make_gateway()
    analysis = summarize(inventory, gateway, parallel_width=1)
    assert len(costs.entries) == len(inventory.files) + 1
    assert set(analysis.file_summaries) == {"a.py", "b.py", "c.py"}
    assert analysis.repo_summary
    assert analysis.complexity == "repo_level"


def test_summarize_failure_degrades_to_unavailable(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "a.py").write_text("def a():\n    pass\n", encoding="utf-8")
    script = [
        ScriptRule(replies=[{"error": "down"}], intent="summarize-file", repeat=True),
    ]
    gateway, _, _ = make_gateway(script=script, retries=1)
    events = EventCollector()
    inventory = build_inventory(root)
    analysis = summarize(inventory, gateway, events=events, parallel_width=1)
    assert analysis.file_summaries["a.py"] == "[unavailable]"
    assert analysis.repo_summary  # repo call still answered by the synthesizer
    assert any(p.get("code") == "summary_failed" for p in events.of("warning"))


def test_summarize_sets_entry_points(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "main.py").write_text(
        'def main():\n    pass\n\nif __name__ == "__main__":\n    main()\n',
        encoding="utf-8",
    )
    (root / "lib.py").write_text("def f():\n    pass\n", encoding="utf-8")
    gateway, _, _ = make_gateway()
    analysis = summarize(build_inventory(root), gateway, parallel_width=1)
    assert analysis.entry_points == ("main.py",)


def test_analysis_roundtrip(tmp_path):
    root = tmp_path / "repo"
    root.mkdir()
    (root / "m.py").write_text("def f():\n    pass\n", encoding="utf-8")
    gateway, _, _ = make_gateway()
    analysis = summarize(build_inventory(root), gateway, parallel_width=1)
    assert BaselineAnalysis.from_dict(analysis.to_dict()) == analysis

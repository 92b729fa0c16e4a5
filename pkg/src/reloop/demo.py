"""Materialize a self-contained offline demo workspace.

The workspace holds a tiny single-file baseline that reports its metric on
stdout, a 60-paper fixture corpus for the file-backed provider, a stub
coder script whose staged edits move the metric 0.812 -> 0.820 -> 0.815
-> 0.833, and a session config wiring it all to the scripted mock backend.
"""

from __future__ import annotations

import json
from pathlib import Path

BASELINE_METRIC = 0.812
STAGE_METRICS = {"stage-1": 0.820, "stage-2": 0.815, "stage-3": 0.833}
PAPER_COUNT = 60

_TASK_DESCRIPTION = (
    "Improve the image classification baseline accuracy on the benchmark "
    "dataset with architecture and training refinements."
)

_PHRASES = (
    "improve image",
    "classification baseline",
    "accuracy benchmark",
    "dataset architecture",
    "training refinements",
)

_TOPICS = (
    "augmentation policies", "residual connections", "attention pooling",
    "label smoothing", "knowledge distillation", "mixup regularization",
    "cosine schedules", "feature pyramids", "weight averaging",
    "sharpness aware minimization", "token pruning", "channel gating",
)


def _baseline_source(metric: float) -> str:
    return (
        '"""Demo baseline: trains nothing and reports a fixed validation accuracy."""\n'
        "\n"
        f"ACCURACY = {metric}\n"
        "\n"
        "\n"
        "def main():\n"
        '    print("training complete")\n'
        '    print(f"METRIC acc {ACCURACY}")\n'
        "\n"
        "\n"
        'if __name__ == "__main__":\n'
        "    main()\n"
    )


def _papers() -> list[dict[str, str]]:
    papers = []
    for i in range(1, PAPER_COUNT + 1):
        phrase = _PHRASES[i % len(_PHRASES)]
        topic = _TOPICS[i % len(_TOPICS)]
        record_id = f"p{i:03d}"
        title = f"Study {i}: {phrase} with {topic}"
        abstract = (
            f"We investigate {phrase} strategies built on {topic}. "
            f"Experiments on standard benchmarks show consistent gains, and we "
            f"analyze when {topic} helps versus hurts generalization."
        )
        papers.append(
            {
                "id": record_id,
                "title": title,
                "abstract": abstract,
                "url": f"https://papers.example/{record_id}",
                "year": 2020 + (i % 6),
                "full_text": abstract
                + f" Full text {i}: the approach combines {topic} with scheduled "
                f"updates, reporting ablations across seeds and budgets.",
            }
        )
    return papers


def make_demo(target_dir: str | Path, seed: int = 7) -> Path:
    """Write the demo workspace; returns the config file path."""
    root = Path(target_dir)
    (root / "baseline").mkdir(parents=True, exist_ok=True)
    (root / "papers").mkdir(exist_ok=True)

    (root / "baseline" / "main.py").write_text(
        _baseline_source(BASELINE_METRIC), encoding="utf-8"
    )
    (root / "papers" / "corpus.json").write_text(
        json.dumps(_papers(), indent=1), encoding="utf-8"
    )

    coder_script = [
        {
            "contains": stage_id,
            "edits": [
                {"action": "write", "path": "main.py", "content": _baseline_source(metric)}
            ],
        }
        for stage_id, metric in STAGE_METRICS.items()
    ]
    (root / "coder_script.json").write_text(
        json.dumps(coder_script, indent=1), encoding="utf-8"
    )

    task = {
        "id": "demo-task",
        "title": "Demo image classification tuning",
        "description": _TASK_DESCRIPTION,
        "baseline_path": "baseline",
        "run_command": "{python} main.py",
        "metric": {"name": "acc", "direction": "higher-better", "source": "stdout"},
        "mode_hints": "review",
    }
    (root / "task.json").write_text(json.dumps(task, indent=1), encoding="utf-8")

    config = {
        "session_id": f"demo-{seed}",
        "seed": seed,
        "offline": True,
        "store_dir": "sessions",
        "task_file": "task.json",
        "survey": {
            "mode": "review",
            "max_papers": 50,
            "keywords_per_round": 8,
            "deep_rounds": 2,
            "relevance_floor": 0.5,
        },
        "evolution": {
            "initial_ideas": 15,
            "children_per_selected": 3,
            "top_k": 5,
            "max_rounds": 4,
            "similarity_threshold": 0.6,
            "lineage_cap": 2,
        },
        "debug": {
            "max_debug_attempts": 4,
            "max_runs_file_level": 5,
            "max_runs_repo_level": 3,
            "run_timeout_s": 60,
        },
        "weights": [0.2, 0.2, 0.2, 0.2, 0.2],
        "gate_timeout_s": 0,
        "methodology_ideas": 1,
        "backends": {
            "mock": {"kind": "mock", "rate_in_usd": 1e-6, "rate_out_usd": 2e-6}
        },
        "provider": {"kind": "file", "fixtures_dir": "papers"},
        "coder": {"kind": "stub", "script": "coder_script.json"},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path

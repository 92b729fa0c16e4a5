from __future__ import annotations

import json
from pathlib import Path

import pytest

from reloop.clocks import LogicalClock
from reloop.domain import MetricContract, TaskSpec
from reloop.gateway import LLMGateway
from reloop.mockllm import MockBackend, ScriptRule


def make_task(tmp_path: Path, description: str = "improve the demo metric", **overrides) -> TaskSpec:
    baseline = tmp_path / "baseline"
    baseline.mkdir(exist_ok=True)
    main = baseline / "main.py"
    if not main.exists():
        main.write_text(
            'ACCURACY = 0.812\n\nprint("training complete")\nprint(f"METRIC acc {ACCURACY}")\n',
            encoding="utf-8",
        )
    fields = {
        "id": "t1",
        "title": "demo task",
        "description": description,
        "baseline_path": str(baseline),
        "run_command": "{python} main.py",
        "metric": MetricContract(name="acc", direction="higher-better"),
        "mode_hints": "review",
    }
    fields.update(overrides)
    return TaskSpec(**fields)


class CostCollector:
    def __init__(self):
        self.entries = []

    def __call__(self, entry):
        self.entries.append(entry)


class EventCollector:
    def __init__(self):
        self.events = []

    def __call__(self, kind, payload):
        self.events.append((kind, payload))
        return len(self.events)

    def kinds(self):
        return [k for k, _ in self.events]

    def of(self, kind):
        return [p for k, p in self.events if k == kind]


def make_gateway(
    script: list[ScriptRule] | None = None,
    seed: int = 0,
    synthesize: bool = True,
    retries: int = 3,
    **backend_kwargs,
) -> tuple[LLMGateway, CostCollector, EventCollector]:
    backend = MockBackend(seed=seed, script=script, synthesize=synthesize, **backend_kwargs)
    costs = CostCollector()
    events = EventCollector()
    gateway = LLMGateway.with_default_roles(
        backend,
        cost_sink=costs,
        event_sink=events,
        retries=retries,
        backoff_s=0.0,
        sleep=lambda s: None,
    )
    return gateway, costs, events


@pytest.fixture
def clock():
    return LogicalClock()


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path

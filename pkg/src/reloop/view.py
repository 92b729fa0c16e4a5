"""Session state as a pure fold over the event log.

The orchestrator mutates state only by appending events and applying them
here, so replaying the log through the same fold reconstructs the live
state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .store import SessionEvent

PHASES = (
    "Init",
    "Surveying",
    "CodeReviewing",
    "Ideating",
    "Evolving",
    "AwaitingFeedback",
    "MethodBuilding",
    "Planning",
    "Executing",
    "Reporting",
    "Done",
    "Failed",
)

TERMINAL_PHASES = ("Done", "Failed")

LEGAL_TRANSITIONS: dict[str, tuple[str, ...]] = {
    "Init": ("Surveying", "Failed"),
    "Surveying": ("CodeReviewing", "Failed"),
    "CodeReviewing": ("Ideating", "Failed"),
    "Ideating": ("AwaitingFeedback", "Failed"),
    "AwaitingFeedback": ("Evolving", "MethodBuilding", "Failed"),
    "Evolving": ("AwaitingFeedback", "MethodBuilding", "Failed"),
    "MethodBuilding": ("Planning", "Failed"),
    "Planning": ("Executing", "Failed"),
    "Executing": ("Reporting", "Failed"),
    "Reporting": ("Done", "Failed"),
    "Done": (),
    "Failed": (),
}


@dataclass
class SessionView:
    session_id: str = ""
    phase: str = "Init"
    round: int = 0
    cause: str | None = None
    task: dict[str, Any] | None = None
    config: dict[str, Any] = field(default_factory=dict)
    survey: dict[str, Any] | None = None
    baseline: dict[str, Any] | None = None
    tree: dict[str, Any] | None = None
    gates: dict[str, dict[str, Any]] = field(default_factory=dict)
    critiques: dict[str, dict[str, Any]] = field(default_factory=dict)
    methodologies: dict[str, dict[str, Any]] = field(default_factory=dict)
    plans: dict[str, dict[str, Any]] = field(default_factory=dict)
    runs: list[dict[str, Any]] = field(default_factory=list)
    stage_results: list[dict[str, Any]] = field(default_factory=list)
    experiments: dict[str, dict[str, Any]] = field(default_factory=dict)
    report: dict[str, Any] | None = None
    cost_total_micro: int = 0
    last_seq: int = 0
    phase_history: list[str] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES

    def pending_gate(self) -> dict[str, Any] | None:
        for gate in self.gates.values():
            if gate["resolution"] == "pending":
                return gate
        return None

    def frontier_ids(self) -> list[str]:
        if not self.tree:
            return []
        return list(self.tree.get("selected_frontier", ()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "phase": self.phase,
            "round": self.round,
            "cause": self.cause,
            "task": self.task,
            "config": self.config,
            "survey": self.survey,
            "baseline": self.baseline,
            "tree": self.tree,
            "gates": self.gates,
            "critiques": self.critiques,
            "methodologies": self.methodologies,
            "plans": self.plans,
            "runs": self.runs,
            "stage_results": self.stage_results,
            "experiments": self.experiments,
            "report": self.report,
            "cost_total_micro": self.cost_total_micro,
            "last_seq": self.last_seq,
            "phase_history": self.phase_history,
        }

    def public_state(self) -> dict[str, Any]:
        """Compact state document for the API and CLI status output."""
        return {
            "session_id": self.session_id,
            "phase": self.phase,
            "round": self.round,
            "cause": self.cause,
            "last_seq": self.last_seq,
            "pending_gate": self.pending_gate(),
            "frontier": self.frontier_ids(),
            "node_count": len(self.tree["nodes"]) if self.tree else 0,
            "cost_total_usd": self.cost_total_micro / 1_000_000,
            "report": self.report,
            "phase_history": self.phase_history,
        }


def apply_event(view: SessionView, event: SessionEvent) -> SessionView:
    payload = event.payload
    kind = event.kind
    if kind == "session_created":
        view.session_id = payload["session_id"]
        view.task = payload["task"]
        view.config = payload["config"]
        view.phase_history.append("Init")
    elif kind == "phase":
        view.phase = payload["to"]
        view.round = payload.get("round", view.round)
        if payload.get("cause"):
            view.cause = payload["cause"]
        view.phase_history.append(payload["to"])
    elif kind == "survey":
        view.survey = payload["result"]
    elif kind == "baseline":
        view.baseline = payload["analysis"]
    elif kind == "tree":
        view.tree = payload["tree"]
    elif kind == "gate_opened":
        view.gates[payload["gate_id"]] = {
            "gate_id": payload["gate_id"],
            "targets": payload["targets"],
            "timeout_s": payload["timeout_s"],
            "opened_at": payload["opened_at"],
            "round": payload.get("round", 0),
            "resolution": "pending",
            "critiques": [],
        }
    elif kind == "critique":
        critique = payload["critique"]
        view.critiques[critique["id"]] = dict(critique)
        gate_id = payload.get("gate_id")
        if gate_id and gate_id in view.gates:
            view.gates[gate_id]["critiques"].append(critique["id"])
    elif kind == "gate_resolved":
        gate = view.gates.get(payload["gate_id"])
        if gate is not None:
            gate["resolution"] = payload["resolution"]
    elif kind == "methodology":
        doc = payload["methodology"]
        view.methodologies[doc["idea_id"]] = doc
    elif kind == "plan":
        view.plans[payload["idea_id"]] = payload["plan"]
    elif kind == "run":
        view.runs.append(payload)
    elif kind == "stage_result":
        view.stage_results.append(payload)
    elif kind == "experiment":
        view.experiments[payload["idea_id"]] = payload["report"]
    elif kind == "report":
        view.report = payload
    elif kind == "cost":
        view.cost_total_micro += int(payload["cost_micro"])
    # warnings, retries, and other informational kinds leave state untouched
    view.last_seq = event.seq
    return view


def fold_events(session_id: str, events: Iterable[SessionEvent]) -> SessionView:
    view = SessionView(session_id=session_id)
    for event in events:
        apply_event(view, event)
    return view

"""The session state machine: sequences all agents, schedules
human-feedback gates, and owns every state mutation.

All writes go through ``_append`` (event log first, then the in-memory
fold), so the live view always equals a replay of the log. One writer per
session; reads are snapshots of the folded view.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .clocks import Clock, WallClock
from .codereview import BaselineAnalysis, build_inventory, summarize
from .coders import Coder
from .domain import Critique, IdeaNode, LiteratureRecord, Methodology, TaskSpec, validate_task
from .executor import (
    DebugConfig,
    RunRecord,
    StagePlan,
    adaptive_evolve,
    dispatch_coder,
    execute,
    plan_stages,
    render_diff,
)
from .gateway import GatewayError, LLMGateway
from .ideas import EvolutionConfig, IdeaEngine, IdeaTree, auto_critiques
from .methodology import MethodologyBuilder
from .store import SNAPSHOT_EVERY, SessionEvent, SessionStore, StoreUnavailable
from .survey import PaperSearchProvider, ProviderUnavailable, SurveyAgent, SurveyConfig
from .view import LEGAL_TRANSITIONS, SessionView, apply_event

logger = logging.getLogger(__name__)


class IllegalTransition(RuntimeError):
    pass


class GateClosed(RuntimeError):
    pass


class UnknownTarget(ValueError):
    pass


@dataclass
class SessionSettings:
    """Per-session knobs beyond the agent configs."""

    survey: SurveyConfig = field(default_factory=SurveyConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    debug: DebugConfig = field(default_factory=DebugConfig)
    weights: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    gate_timeout_s: float = 0.0  # 0 = non-blocking, gates auto-resolve
    methodology_ideas: int | None = None  # None = all frontier ideas

    def to_dict(self) -> dict[str, Any]:
        return {
            "survey": self.survey.to_dict(),
            "evolution": self.evolution.to_dict(),
            "debug": self.debug.to_dict(),
            "weights": list(self.weights),
            "gate_timeout_s": self.gate_timeout_s,
            "methodology_ideas": self.methodology_ideas,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SessionSettings":
        return cls(
            survey=SurveyConfig.from_dict(d.get("survey", {})),
            evolution=EvolutionConfig.from_dict(d.get("evolution", {})),
            debug=DebugConfig.from_dict(d.get("debug", {})),
            weights=tuple(d.get("weights", (0.2,) * 5)),
            gate_timeout_s=d.get("gate_timeout_s", 0.0),
            methodology_ideas=d.get("methodology_ideas"),
        )


class Orchestrator:
    """Single-writer driver for one session."""

    def __init__(
        self,
        store: SessionStore,
        session_id: str,
        task: TaskSpec,
        settings: SessionSettings,
        gateway: LLMGateway,
        provider: PaperSearchProvider,
        coder: Coder,
        clock: Clock | None = None,
    ):
        self.store = store
        self.session_id = session_id
        self.task = task
        self.settings = settings
        self.gateway = gateway
        self.provider = provider
        self.coder = coder
        self.clock = clock or WallClock()
        self.view = SessionView(session_id=session_id)
        self._tree = IdeaTree()
        # Deterministic offline runs serialize agent concurrency so the
        # event order is stable.
        width = 1 if getattr(self.clock, "deterministic", False) else 0
        self.survey_agent = SurveyAgent(
            gateway, provider, events=self._emit, scoring_width=width or 8
        )
        self.idea_engine = IdeaEngine(gateway, events=self._emit)
        self.builder = MethodologyBuilder(gateway, events=self._emit)
        self._summary_width = width or 4

    # -- construction -----------------------------------------------------------

    @classmethod
    def create(
        cls,
        store: SessionStore,
        session_id: str,
        task: TaskSpec,
        settings: SessionSettings,
        gateway: LLMGateway,
        provider: PaperSearchProvider,
        coder: Coder,
        clock: Clock | None = None,
    ) -> "Orchestrator":
        store.create_session(session_id)
        orchestrator = cls(
            store, session_id, task, settings, gateway, provider, coder, clock
        )
        orchestrator._append(
            "session_created",
            {
                "session_id": session_id,
                "task": task.to_dict(),
                "config": settings.to_dict(),
            },
        )
        return orchestrator

    @classmethod
    def resume(
        cls,
        store: SessionStore,
        session_id: str,
        gateway: LLMGateway,
        provider: PaperSearchProvider,
        coder: Coder,
        clock: Clock | None = None,
    ) -> "Orchestrator":
        view = store.replay(session_id)
        if view.task is None:
            raise StoreUnavailable(f"session {session_id} has no task record")
        task = TaskSpec.from_dict(view.task)
        settings = SessionSettings.from_dict(view.config)
        orchestrator = cls(
            store, session_id, task, settings, gateway, provider, coder, clock
        )
        orchestrator.view = view
        if view.tree:
            orchestrator._tree = IdeaTree.from_export(view.tree)
        return orchestrator

    # -- event plumbing ------------------------------------------------------------

    def _append(self, kind: str, payload: dict[str, Any]) -> int:
        seq = self.store.append(self.session_id, kind, payload, self.clock.iso())
        apply_event(self.view, SessionEvent(seq, "", kind, payload))
        if seq % SNAPSHOT_EVERY == 0:
            self.store.write_snapshot(self.session_id, seq, self.view.to_dict())
        return seq

    def _emit(self, kind: str, payload: dict[str, Any]) -> int:
        return self._append(kind, payload)

    def _transition(self, to: str, round_index: int | None = None, cause: str | None = None) -> None:
        allowed = LEGAL_TRANSITIONS[self.view.phase]
        if to not in allowed:
            raise IllegalTransition(f"{self.view.phase} -> {to} is not a legal transition")
        payload: dict[str, Any] = {"from": self.view.phase, "to": to}
        if round_index is not None:
            payload["round"] = round_index
        if cause:
            payload["cause"] = cause
        self._append("phase", payload)

    def _fail(self, cause: str) -> None:
        logger.error("session %s failed: %s", self.session_id, cause)
        self._transition("Failed", cause=cause)

    def _commit_tree(self) -> None:
        self._append("tree", {"tree": self._tree.export()})

    # -- the state machine ------------------------------------------------------------

    def advance(self) -> SessionView:
        """Run the current phase's work and take one transition."""
        if self.view.terminal:
            raise IllegalTransition(f"session is terminal ({self.view.phase})")
        handler = {
            "Init": self._phase_init,
            "Surveying": self._phase_survey,
            "CodeReviewing": self._phase_code_review,
            "Ideating": self._phase_ideate,
            "AwaitingFeedback": self._phase_awaiting_feedback,
            "Evolving": self._phase_evolve,
            "MethodBuilding": self._phase_method_building,
            "Planning": self._phase_planning,
            "Executing": self._phase_executing,
            "Reporting": self._phase_reporting,
        }[self.view.phase]
        try:
            handler()
        except (IllegalTransition, StoreUnavailable):
            raise
        except ProviderUnavailable as exc:
            self._fail(f"ProviderUnavailable: {exc}")
        except Exception as exc:
            self._fail(f"{type(exc).__name__}: {exc}")
        return self.view

    def run_to_completion(self, max_steps: int = 10_000) -> SessionView:
        """Advance until terminal, waiting politely at interactive gates."""
        for _ in range(max_steps):
            if self.view.terminal:
                break
            before = self.view.last_seq
            self.advance()
            if (
                self.view.phase == "AwaitingFeedback"
                and self.view.last_seq == before
            ):
                self.clock.sleep(0.05)
        return self.view

    # -- phases --------------------------------------------------------------------

    def _phase_init(self) -> None:
        report = validate_task(self.task)
        if not report.ok:
            self._fail(f"invalid task: {'; '.join(report.problems)}")
            return
        self._transition("Surveying")

    def _phase_survey(self) -> None:
        result = self.survey_agent.run_survey(self.task, self.settings.survey)
        self._append("survey", {"result": result.to_dict()})
        if result.truncated:
            # Partial results are persisted above; provider loss is fatal.
            self._fail("ProviderUnavailable: survey truncated by provider outage")
            return
        self._transition("CodeReviewing")

    def _phase_code_review(self) -> None:
        inventory = build_inventory(self.task.baseline_path)
        analysis = summarize(
            inventory, self.gateway, events=self._emit, parallel_width=self._summary_width
        )
        self._append("baseline", {"analysis": analysis.to_dict()})
        self._transition("Ideating")

    def _phase_ideate(self) -> None:
        baseline = self._baseline()
        literature = self._literature()
        cfg = self.settings.evolution
        roots = self.idea_engine.generate_ideas(
            self.task, baseline, literature, cfg, tree=self._tree
        )
        if not roots:
            self._fail("idea generation produced no ideas")
            return
        self._assess_nodes(roots)
        self._select_round(candidates=roots, round_index=0)
        self._open_gate(round_index=0)

    def _phase_awaiting_feedback(self) -> None:
        gate = self.view.pending_gate()
        if gate is None:
            self._leave_gate()
            return
        if gate["resolution"] == "pending":
            timeout = gate["timeout_s"]
            expired = timeout > 0 and self.clock.now() >= gate["opened_at"] + timeout
            if timeout == 0 or expired:
                self._auto_resolve(gate)
            else:
                return  # still waiting on the human; no transition
        self._leave_gate()

    def _phase_evolve(self) -> None:
        cfg = self.settings.evolution
        round_index = self.view.round
        frontier = self._tree.frontier_nodes()
        critiques = self._gate_critiques()
        children = self.idea_engine.evolve(
            frontier, critiques, self._literature(), cfg, self._tree
        )
        if not children:
            self._append("evolution_stalled", {"round": round_index})
            self._commit_tree()
            self._transition("MethodBuilding")
            return
        self._assess_nodes(children)
        candidates = list(self._tree.nodes.values()) if cfg.select_from_all else children
        self._select_round(candidates=candidates, round_index=round_index)
        self._open_gate(round_index=round_index)

    def _phase_method_building(self) -> None:
        literature = self._literature()
        baseline = self._baseline()
        for idea in self._method_targets():
            try:
                initial = self.builder.initialize(idea, self.task, baseline, literature)
                self._append("methodology", {"methodology": initial.to_dict()})
                refined = self.builder.refine(
                    initial, self._critiques_for(idea.id), literature, idea=idea
                )
                self._append("methodology", {"methodology": refined.to_dict()})
                self._log_methodology_assessment(idea, refined)
            except GatewayError as exc:
                self._emit(
                    "warning",
                    {"code": "methodology_failed", "idea": idea.id, "detail": str(exc)},
                )
        if not self.view.methodologies:
            self._fail("no methodology could be built")
            return
        self._transition("Planning")

    def _log_methodology_assessment(self, idea: IdeaNode, refined: Methodology) -> None:
        """Informational multidimensional score of the refined framework;
        nothing gates on it."""
        try:
            probe = IdeaNode(id=f"{idea.id}-m{refined.revision}", text=refined.render_text())
            assessment = self.idea_engine.assess(probe, self.settings.weights)
        except GatewayError as exc:
            self._emit(
                "warning",
                {"code": "methodology_assessment_failed", "idea": idea.id, "detail": str(exc)},
            )
            return
        self._append(
            "methodology_assessment",
            {
                "idea_id": idea.id,
                "revision": refined.revision,
                "assessment": assessment.to_dict(),
            },
        )

    def _phase_planning(self) -> None:
        baseline = self._baseline()
        for idea_id, doc in sorted(self.view.methodologies.items()):
            methodology = Methodology.from_dict(doc)
            try:
                plan = plan_stages(methodology.render_text(), baseline, self.gateway)
            except Exception as exc:
                self._emit(
                    "warning",
                    {"code": "planning_failed", "idea": idea_id, "detail": str(exc)},
                )
                continue
            self._append("plan", {"idea_id": idea_id, "plan": plan.to_dict()})
        if not self.view.plans:
            self._fail("no stage plan could be built")
            return
        self._transition("Executing")

    def _phase_executing(self) -> None:
        baseline = self._baseline()
        coder_kind = dispatch_coder(baseline)
        for idea_id, plan_doc in sorted(self.view.plans.items()):
            plan = StagePlan.from_dict(plan_doc)
            try:
                self._run_experiment(idea_id, plan, baseline, coder_kind)
            except Exception as exc:
                self._emit(
                    "warning",
                    {"code": "experiment_failed", "idea": idea_id, "detail": str(exc)},
                )
        self._transition("Reporting")

    def _phase_reporting(self) -> None:
        best_idea, best_metric, baseline_metric = None, None, None
        for idea_id, report in sorted(self.view.experiments.items()):
            baseline_metric = report["baseline_metric"]
            metric = report["best_metric"]
            if best_metric is None or self.task.metric.better(metric, best_metric):
                best_idea, best_metric = idea_id, metric
        self._append(
            "report",
            {
                "best_idea": best_idea,
                "best_metric": best_metric,
                "baseline_metric": baseline_metric,
                "experiments": len(self.view.experiments),
                "node_count": len(self._tree.nodes),
                "cost_total_usd": self.view.cost_total_micro / 1_000_000,
            },
        )
        self._transition("Done")

    # -- idea round helpers -------------------------------------------------------------

    def _assess_nodes(self, nodes: Sequence[IdeaNode]) -> None:
        for node in nodes:
            if self._tree.get(node.id).assessment is not None:
                continue
            try:
                assessment = self.idea_engine.assess(node, self.settings.weights)
            except GatewayError as exc:
                self._emit(
                    "warning",
                    {"code": "assessment_failed", "idea": node.id, "detail": str(exc)},
                )
                continue
            self._tree.update(self._tree.get(node.id).with_assessment(assessment))

    def _select_round(self, candidates: Sequence[IdeaNode], round_index: int) -> None:
        assessed = [
            self._tree.get(c.id)
            for c in candidates
            if self._tree.get(c.id).assessment is not None
        ]
        if not assessed:
            raise RuntimeError("no assessed candidates to select from")
        roots = {c.id: self._tree.root_of(c.id) for c in assessed}
        frontier = self.idea_engine.select_top(assessed, self.settings.evolution, roots)
        frontier_ids = {n.id for n in frontier}
        for candidate in assessed:
            status = "selected" if candidate.id in frontier_ids else "pruned"
            self._tree.update(self._tree.get(candidate.id).with_status(status))
        self._tree.round = round_index
        self._tree.selected_frontier = [n.id for n in frontier]
        self._append(
            "round",
            {
                "round": round_index,
                "frontier": list(self._tree.selected_frontier),
                "nodes": len(self._tree.nodes),
            },
        )
        self._commit_tree()

    # -- feedback gates ---------------------------------------------------------------

    def _open_gate(self, round_index: int) -> dict[str, Any]:
        gate = self.open_feedback_gate(
            self._tree.selected_frontier, self.settings.gate_timeout_s, round_index
        )
        self._transition("AwaitingFeedback", round_index=round_index)
        return gate

    def open_feedback_gate(
        self, targets: Sequence[str], timeout_s: float, round_index: int
    ) -> dict[str, Any]:
        if self.view.phase not in ("Ideating", "Evolving"):
            raise IllegalTransition(
                f"feedback gate can only open at an evolution round boundary, not {self.view.phase}"
            )
        gate_id = f"gate-r{round_index}"
        payload = {
            "gate_id": gate_id,
            "targets": list(targets),
            "timeout_s": timeout_s,
            "opened_at": self.clock.now(),
            "round": round_index,
        }
        self._append("gate_opened", payload)
        return self.view.gates[gate_id]

    def submit_feedback(self, gate_id: str, critiques: Sequence[Critique]) -> dict[str, Any]:
        gate = self.view.gates.get(gate_id)
        if gate is None or gate["resolution"] != "pending":
            raise GateClosed(f"gate {gate_id} is not pending")
        targets = set(gate["targets"])
        for critique in critiques:
            if critique.target_idea not in targets:
                raise UnknownTarget(
                    f"critique targets {critique.target_idea}, not in gate targets"
                )
        for critique in critiques:
            self._append("critique", {"critique": critique.to_dict(), "gate_id": gate_id})
            self._attach_critique(critique)
        self._append("gate_resolved", {"gate_id": gate_id, "resolution": "human"})
        self._commit_tree()
        return {"gate_id": gate_id, "resolution": "human", "count": len(critiques)}

    def _auto_resolve(self, gate: dict[str, Any]) -> None:
        frontier = [self._tree.get(i) for i in gate["targets"] if i in self._tree.nodes]
        for critique in auto_critiques(self._tree, frontier, gate.get("round", 0)):
            self._append(
                "critique", {"critique": critique.to_dict(), "gate_id": gate["gate_id"]}
            )
            self._attach_critique(critique)
        self._append(
            "gate_resolved", {"gate_id": gate["gate_id"], "resolution": "auto"}
        )
        self._commit_tree()

    def _attach_critique(self, critique: Critique) -> None:
        if critique.target_idea in self._tree.nodes:
            self._tree.update(
                self._tree.get(critique.target_idea).with_critique(critique)
            )

    def _leave_gate(self) -> None:
        if self.view.round < self.settings.evolution.max_rounds:
            self._transition("Evolving", round_index=self.view.round + 1)
        else:
            self._transition("MethodBuilding")

    def _gate_critiques(self) -> list[Critique]:
        """Critiques recorded on the most recently resolved gate."""
        resolved = [
            g for g in self.view.gates.values() if g["resolution"] != "pending"
        ]
        if not resolved:
            return []
        latest = max(resolved, key=lambda g: g.get("round", 0))
        return [
            Critique.from_dict(self.view.critiques[cid])
            for cid in latest["critiques"]
            if cid in self.view.critiques
        ]

    def _critiques_for(self, idea_id: str) -> list[Critique]:
        return [
            Critique.from_dict(c)
            for c in self.view.critiques.values()
            if c["target_idea"] == idea_id
        ]

    # -- experiments ----------------------------------------------------------------

    def _run_experiment(
        self,
        idea_id: str,
        plan: StagePlan,
        baseline: BaselineAnalysis,
        coder_kind: str,
    ) -> None:
        workdir = self.store.root / self.session_id / "work" / idea_id
        if workdir.exists():
            shutil.rmtree(workdir)
        workdir.parent.mkdir(parents=True, exist_ok=True)
        shutil.copytree(self.task.baseline_path, workdir)

        def record_run(record: RunRecord) -> None:
            self._append("run", {"idea_id": idea_id, "record": record.to_dict()})

        baseline_record = execute(
            workdir, self.task, self.settings.debug, run_index=0, clock=self.clock
        )
        record_run(baseline_record)
        if baseline_record.metric_value is None:
            self._emit(
                "warning",
                {
                    "code": "baseline_run_failed",
                    "idea": idea_id,
                    "exit_code": baseline_record.exit_code,
                },
            )
            return
        report = adaptive_evolve(
            plan,
            workdir,
            self.task,
            self.settings.debug,
            coder_kind,
            self.coder,
            self.gateway,
            baseline.inventory,
            baseline_record,
            events=lambda kind, payload: self._append(
                kind, {**payload, "idea_id": idea_id}
            ),
            clock=self.clock,
            record_run=record_run,
        )
        diff_blobs = {}
        for stage_id, states in report.committed:
            diff_blobs[stage_id] = self.store.put_blob(
                self.session_id, render_diff(states).encode("utf-8")
            )
        self._append(
            "experiment",
            {
                "idea_id": idea_id,
                "report": report.to_dict(),
                "diff_blobs": diff_blobs,
            },
        )

    # -- lookups ---------------------------------------------------------------------

    def _baseline(self) -> BaselineAnalysis:
        if self.view.baseline is None:
            raise RuntimeError("baseline analysis not available yet")
        return BaselineAnalysis.from_dict(self.view.baseline)

    def _literature(self) -> list[LiteratureRecord]:
        if self.view.survey is None:
            return []
        return [LiteratureRecord.from_dict(r) for r in self.view.survey["records"]]

    def _method_targets(self) -> list[IdeaNode]:
        frontier = self._tree.frontier_nodes()
        limit = self.settings.methodology_ideas
        return frontier if limit is None else frontier[:limit]

"""The self-evolving idea search: generate, assess, select a diverse
top-k, and evolve with critiques, round by round.

Selection is greedy by overall score with two diversity brakes: a text
similarity threshold (Jaccard over lowercase word 3-grams by default,
pluggable) and a cap on ideas descending from the same root concept.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .codereview import BaselineAnalysis
from .domain import (
    ASSESSMENT_DIMENSIONS,
    Assessment,
    Critique,
    IdeaNode,
    LiteratureRecord,
    TaskSpec,
    check_forest,
    jaccard_similarity,
    validate_weights,
)
from .gateway import GatewayError, LLMGateway
from .prompts import build_prompt

logger = logging.getLogger(__name__)

SimilarityFn = Callable[[str, str], float]
# Called at each round boundary with (tree, frontier, round); returns the
# critiques feeding the next evolution round.
CritiqueSource = Callable[["IdeaTree", list[IdeaNode], int], list[Critique]]


@dataclass(frozen=True)
class EvolutionConfig:
    initial_ideas: int = 15
    children_per_selected: int = 3
    top_k: int = 5
    max_rounds: int = 4
    similarity_threshold: float = 0.6
    lineage_cap: int = 2
    select_from_all: bool = False  # widen selection beyond the last round's children

    def __post_init__(self) -> None:
        for name in ("initial_ideas", "children_per_selected", "top_k", "lineage_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.top_k > self.initial_ideas:
            raise ValueError("top_k must not exceed initial_ideas")
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in [0,1]")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvolutionConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial_ideas": self.initial_ideas,
            "children_per_selected": self.children_per_selected,
            "top_k": self.top_k,
            "max_rounds": self.max_rounds,
            "similarity_threshold": self.similarity_threshold,
            "lineage_cap": self.lineage_cap,
            "select_from_all": self.select_from_all,
        }


class IdeaTree:
    """The evolution forest plus the current frontier."""

    def __init__(self) -> None:
        self.nodes: dict[str, IdeaNode] = {}
        self.round = 0
        self.selected_frontier: list[str] = []
        self._counter = 0

    def new_id(self) -> str:
        self._counter += 1
        return f"n{self._counter:04d}"

    def add(self, node: IdeaNode) -> IdeaNode:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id}")
        if node.parent is not None and node.parent not in self.nodes:
            raise ValueError(f"parent {node.parent} not in tree")
        self.nodes[node.id] = node
        return node

    def update(self, node: IdeaNode) -> IdeaNode:
        if node.id not in self.nodes:
            raise ValueError(f"unknown node id {node.id}")
        self.nodes[node.id] = node
        return node

    def get(self, node_id: str) -> IdeaNode:
        return self.nodes[node_id]

    def root_of(self, node_id: str) -> str:
        current = self.nodes[node_id]
        while current.parent is not None:
            current = self.nodes[current.parent]
        return current.id

    def children_of(self, node_id: str) -> list[IdeaNode]:
        return [n for n in self.nodes.values() if n.parent == node_id]

    def frontier_nodes(self) -> list[IdeaNode]:
        return [self.nodes[i] for i in self.selected_frontier]

    def depth(self) -> int:
        return max((n.depth for n in self.nodes.values()), default=0)

    def check_invariants(self, cfg: EvolutionConfig) -> list[str]:
        problems = check_forest(self.nodes)
        if self.depth() > cfg.max_rounds:
            problems.append(f"depth {self.depth()} exceeds max_rounds {cfg.max_rounds}")
        if len(self.selected_frontier) > cfg.top_k:
            problems.append("frontier larger than top_k")
        for node_id in self.nodes:
            count = len(self.children_of(node_id))
            if count > cfg.children_per_selected:
                problems.append(f"{node_id} has {count} children")
        return problems

    def export(self) -> dict[str, Any]:
        ordered = sorted(self.nodes.values(), key=lambda n: n.id)
        return {
            "round": self.round,
            "selected_frontier": list(self.selected_frontier),
            "nodes": [n.to_dict() for n in ordered],
            "edges": [[n.parent, n.id] for n in ordered if n.parent is not None],
        }

    @classmethod
    def from_export(cls, d: Mapping[str, Any]) -> "IdeaTree":
        tree = cls()
        for raw in d["nodes"]:
            node = IdeaNode.from_dict(raw)
            tree.nodes[node.id] = node
        tree.round = d.get("round", 0)
        tree.selected_frontier = list(d.get("selected_frontier", ()))
        tree._counter = len(tree.nodes)
        return tree


class IdeaEngine:
    def __init__(
        self,
        gateway: LLMGateway,
        events: Callable[[str, dict[str, Any]], Any] | None = None,
        similarity: SimilarityFn = jaccard_similarity,
        weights: Sequence[float] | None = None,
    ):
        self.gateway = gateway
        self._events = events or (lambda kind, payload: None)
        self.similarity = similarity
        self.weights = validate_weights(weights) if weights is not None else None

    # -- generation -------------------------------------------------------------

    def generate_ideas(
        self,
        task: TaskSpec,
        baseline: BaselineAnalysis,
        literature: Sequence[LiteratureRecord],
        cfg: EvolutionConfig,
        tree: IdeaTree | None = None,
    ) -> list[IdeaNode]:
        """Exactly cfg.initial_ideas root nodes; one retry covers a shortfall."""
        tree = tree if tree is not None else IdeaTree()
        lit_ids = [r.id for r in literature]
        raw_ideas = self._ask_ideas(task, baseline, literature, cfg.initial_ideas)
        if len(raw_ideas) < cfg.initial_ideas:
            retry = self._ask_ideas(
                task, baseline, literature, cfg.initial_ideas - len(raw_ideas),
                batch=2,
            )
            raw_ideas.extend(retry)
            if len(raw_ideas) < cfg.initial_ideas:
                self._events(
                    "warning",
                    {
                        "code": "idea_shortfall",
                        "requested": cfg.initial_ideas,
                        "received": len(raw_ideas),
                    },
                )
        nodes = []
        for raw in raw_ideas[: cfg.initial_ideas]:
            cites = tuple(c for c in raw.get("cites", ()) if c in lit_ids)
            node = IdeaNode(id=tree.new_id(), text=raw["text"], cites=cites)
            tree.add(node)
            nodes.append(node)
        return nodes

    def _ask_ideas(
        self,
        task: TaskSpec,
        baseline: BaselineAnalysis,
        literature: Sequence[LiteratureRecord],
        count: int,
        batch: int = 1,
    ) -> list[dict[str, Any]]:
        prompt = build_prompt(
            "generate-ideas",
            {
                "count": str(count),
                "batch": str(batch),
                "task_id": task.id,
                "task_title": task.title,
                "task_description": task.description,
                "baseline_summary": baseline.repo_summary,
                "literature_ids": "\n".join(r.id for r in literature),
                "literature_titles": "\n".join(r.title for r in literature[:20]),
            },
            respond_with='{"ideas": [{"text": "...", "cites": ["id"]}]}',
        )
        reply = self.gateway.complete_structured(
            "generator", prompt, {"ideas": "list"}, validator=_ideas_validator
        )
        return [i for i in reply["ideas"] if isinstance(i, dict) and i.get("text")]

    # -- assessment --------------------------------------------------------------

    def assess(self, idea: IdeaNode, weights: Sequence[float]) -> Assessment:
        weights = validate_weights(weights)
        prompt = build_prompt(
            "assess-idea",
            {"idea_id": idea.id, "idea_text": idea.text},
            respond_with=(
                '{"coherence": 0, "credibility": 0, "verifiability": 0, '
                '"novelty": 0, "alignment": 0, "narratives": {...}}'
            ),
        )
        reply = self.gateway.complete_structured(
            "assessor",
            prompt,
            {dim: "number" for dim in ASSESSMENT_DIMENSIONS},
        )
        scores: dict[str, float] = {}
        for dim in ASSESSMENT_DIMENSIONS:
            value = float(reply[dim])
            if not 0.0 <= value <= 10.0:
                clamped = min(10.0, max(0.0, value))
                self._events(
                    "warning",
                    {"code": "score_clamped", "idea": idea.id, "dimension": dim, "raw": value},
                )
                value = clamped
            scores[dim] = value
        narratives = reply.get("narratives")
        if not isinstance(narratives, dict):
            narratives = {dim: "" for dim in ASSESSMENT_DIMENSIONS}
        return Assessment.build(scores, weights, narratives)

    # -- diverse selection ----------------------------------------------------------

    def select_top(
        self,
        candidates: Sequence[IdeaNode],
        cfg: EvolutionConfig,
        roots: Mapping[str, str] | None = None,
    ) -> list[IdeaNode]:
        """Greedy by overall score desc (id asc tiebreak); a candidate is
        rejected when too similar to an admitted one or when its root
        lineage already holds lineage_cap admissions."""
        for candidate in candidates:
            if candidate.assessment is None:
                raise ValueError(f"candidate {candidate.id} is not assessed")
        if roots is None:
            if any(c.parent is not None for c in candidates):
                raise ValueError("roots mapping required for non-root candidates")
            roots = {c.id: c.id for c in candidates}
        ordered = sorted(
            candidates, key=lambda c: (-(c.assessment.overall), c.id)  # type: ignore[union-attr]
        )
        admitted: list[IdeaNode] = []
        lineage_counts: dict[str, int] = {}
        for candidate in ordered:
            if len(admitted) >= cfg.top_k:
                break
            if any(
                self.similarity(candidate.text, kept.text) > cfg.similarity_threshold
                for kept in admitted
            ):
                continue
            root = roots[candidate.id]
            if lineage_counts.get(root, 0) >= cfg.lineage_cap:
                continue
            admitted.append(candidate)
            lineage_counts[root] = lineage_counts.get(root, 0) + 1
        return admitted

    # -- evolution ---------------------------------------------------------------------

    def evolve(
        self,
        selected: Sequence[IdeaNode],
        critiques: Sequence[Critique],
        literature: Sequence[LiteratureRecord],
        cfg: EvolutionConfig,
        tree: IdeaTree,
    ) -> list[IdeaNode]:
        """Each selected node gains exactly children_per_selected children;
        a per-parent gateway failure yields zero children for that parent."""
        if not selected:
            raise ValueError("no selected ideas to evolve")
        for node in selected:
            if node.depth >= cfg.max_rounds:
                raise ValueError(
                    f"node {node.id} at depth {node.depth} cannot evolve past max_rounds"
                )
        lit_ids = [r.id for r in literature]
        by_target: dict[str, list[Critique]] = {}
        for critique in critiques:
            by_target.setdefault(critique.target_idea, []).append(critique)
        children: list[IdeaNode] = []
        for parent in selected:
            parent_critiques = by_target.get(parent.id, [])
            try:
                raw_children = self._ask_children(parent, parent_critiques, literature, cfg)
            except GatewayError as exc:
                self._events(
                    "warning",
                    {"code": "evolve_failed", "parent": parent.id, "detail": str(exc)},
                )
                continue
            consumed = tuple(c.id for c in parent_critiques)
            for raw in raw_children[: cfg.children_per_selected]:
                cites = tuple(c for c in raw.get("cites", ()) if c in lit_ids)
                child = IdeaNode(
                    id=tree.new_id(),
                    text=raw["text"],
                    parent=parent.id,
                    depth=parent.depth + 1,
                    cites=cites,
                    consumed_critiques=consumed,
                )
                tree.add(child)
                children.append(child)
        return children

    def _ask_children(
        self,
        parent: IdeaNode,
        critiques: Sequence[Critique],
        literature: Sequence[LiteratureRecord],
        cfg: EvolutionConfig,
    ) -> list[dict[str, Any]]:
        count = cfg.children_per_selected
        prompt = build_prompt(
            "evolve-idea",
            {
                "parent_id": parent.id,
                "parent_text": parent.text,
                "count": str(count),
                "critiques": "\n".join(f"{c.id}: {c.text}" for c in critiques),
                "literature_ids": "\n".join(r.id for r in literature[:20]),
            },
            respond_with='{"children": [{"text": "...", "cites": []}]}',
        )
        reply = self.gateway.complete_structured(
            "evolver",
            prompt,
            {"children": "list"},
            validator=lambda p: _children_validator(p, count),
        )
        return [c for c in reply["children"] if isinstance(c, dict) and c.get("text")]

    # -- the whole loop ------------------------------------------------------------------

    def run_evolution(
        self,
        task: TaskSpec,
        baseline: BaselineAnalysis,
        literature: Sequence[LiteratureRecord],
        critique_source: CritiqueSource | None,
        cfg: EvolutionConfig,
        weights: Sequence[float] | None = None,
    ) -> IdeaTree:
        """generate -> assess -> select -> evolve until max_rounds (or a
        round that yields no children). Every round boundary emits an event
        and runs the feedback check."""
        weights = validate_weights(weights) if weights is not None else (
            self.weights or validate_weights([0.2] * 5)
        )
        source = critique_source or auto_critiques
        tree = IdeaTree()
        roots = self.generate_ideas(task, baseline, literature, cfg, tree)
        self._assess_all(tree, roots, weights)
        frontier = self._commit_selection(tree, roots, cfg, round_index=0)
        critiques = self._gate_check(tree, frontier, 0, source)
        for round_index in range(1, cfg.max_rounds + 1):
            children = self.evolve(frontier, critiques, literature, cfg, tree)
            if not children:
                self._events("evolution_stalled", {"round": round_index})
                break
            self._assess_all(tree, children, weights)
            candidates = list(tree.nodes.values()) if cfg.select_from_all else children
            frontier = self._commit_selection(tree, candidates, cfg, round_index)
            critiques = self._gate_check(tree, frontier, round_index, source)
        return tree

    def _assess_all(
        self, tree: IdeaTree, nodes: Sequence[IdeaNode], weights: Sequence[float]
    ) -> None:
        for node in nodes:
            if tree.get(node.id).assessment is not None:
                continue
            try:
                assessment = self.assess(node, weights)
            except GatewayError as exc:
                self._events(
                    "warning",
                    {"code": "assessment_failed", "idea": node.id, "detail": str(exc)},
                )
                continue
            tree.update(tree.get(node.id).with_assessment(assessment))

    def _commit_selection(
        self,
        tree: IdeaTree,
        candidates: Sequence[IdeaNode],
        cfg: EvolutionConfig,
        round_index: int,
    ) -> list[IdeaNode]:
        fresh = [
            tree.get(c.id) for c in candidates if tree.get(c.id).assessment is not None
        ]
        roots = {c.id: tree.root_of(c.id) for c in fresh}
        frontier = self.select_top(fresh, cfg, roots)
        frontier_ids = {n.id for n in frontier}
        for candidate in fresh:
            status = "selected" if candidate.id in frontier_ids else "pruned"
            tree.update(tree.get(candidate.id).with_status(status))
        tree.round = round_index
        tree.selected_frontier = [n.id for n in frontier]
        self._events(
            "round",
            {
                "round": round_index,
                "frontier": list(tree.selected_frontier),
                "nodes": len(tree.nodes),
            },
        )
        return [tree.get(i) for i in tree.selected_frontier]

    def _gate_check(
        self,
        tree: IdeaTree,
        frontier: list[IdeaNode],
        round_index: int,
        source: CritiqueSource,
    ) -> list[Critique]:
        critiques = source(tree, frontier, round_index)
        for critique in critiques:
            if critique.target_idea in tree.nodes:
                tree.update(tree.get(critique.target_idea).with_critique(critique))
        return critiques


def auto_critiques(tree: IdeaTree, frontier: list[IdeaNode], round_index: int) -> list[Critique]:
    """Agent-generated feedback: each frontier idea is critiqued along its
    weakest assessment dimension."""
    critiques = []
    for node in frontier:
        if node.assessment is None:
            continue
        dim = node.assessment.lowest_dimension()
        narrative = node.assessment.narratives.get(dim, f"weakest dimension: {dim}")
        critiques.append(
            Critique(
                id=f"auto-r{round_index}-{node.id}",
                source="agent",
                target_idea=node.id,
                text=narrative or f"weakest dimension: {dim}",
            )
        )
    return critiques


def _ideas_validator(parsed: dict[str, Any]) -> str | None:
    ideas = parsed.get("ideas")
    if not isinstance(ideas, list) or not ideas:
        return "ideas must be a non-empty list"
    for idea in ideas:
        if not isinstance(idea, dict) or not str(idea.get("text", "")).strip():
            return "each idea must be an object with non-empty text"
    return None


def _children_validator(parsed: dict[str, Any], count: int) -> str | None:
    children = parsed.get("children")
    if not isinstance(children, list):
        return "children must be a list"
    valid = [c for c in children if isinstance(c, dict) and str(c.get("text", "")).strip()]
    if len(valid) < count:
        return f"expected {count} children, got {len(valid)}"
    return None

"""Idea-to-methodology construction: initialize a structured framework
from a selected idea, then refine it with critiques and literature.

Initialization must produce the five required sections; refinement may
extend the document but never drops a heading, and each refinement logs
which critiques it addressed.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Callable, Sequence

from .codereview import BaselineAnalysis
from .domain import (
    REQUIRED_METHODOLOGY_SECTIONS,
    Critique,
    IdeaNode,
    LiteratureRecord,
    Methodology,
    TaskSpec,
)
from .gateway import LLMGateway
from .prompts import build_prompt

logger = logging.getLogger(__name__)


class MethodologyBuilder:
    def __init__(
        self,
        gateway: LLMGateway,
        events: Callable[[str, dict[str, Any]], Any] | None = None,
    ):
        self.gateway = gateway
        self._events = events or (lambda kind, payload: None)

    def initialize(
        self,
        idea: IdeaNode,
        task: TaskSpec,
        baseline: BaselineAnalysis,
        literature: Sequence[LiteratureRecord],
    ) -> Methodology:
        prompt = build_prompt(
            "init-methodology",
            {
                "idea_id": idea.id,
                "idea_text": idea.text,
                "task_description": task.description,
                "baseline_summary": baseline.repo_summary,
                "required_sections": "\n".join(REQUIRED_METHODOLOGY_SECTIONS),
                "literature_titles": "\n".join(r.title for r in literature[:15]),
            },
            respond_with='{"sections": [["heading", "body"], ...]}',
        )
        reply = self.gateway.complete_structured(
            "methodologist",
            prompt,
            {"sections": "list"},
            validator=lambda p: _sections_validator(p, REQUIRED_METHODOLOGY_SECTIONS),
        )
        return Methodology(
            idea_id=idea.id,
            sections=tuple((h, b) for h, b in reply["sections"]),
            revision=0,
        )

    def refine(
        self,
        methodology: Methodology,
        critiques: Sequence[Critique],
        literature: Sequence[LiteratureRecord],
        idea: IdeaNode | None = None,
    ) -> Methodology:
        """One refinement pass. With no critiques available, the idea's
        assessment narratives stand in as the critique space."""
        critiques = list(critiques)
        if not critiques and idea is not None and idea.assessment is not None:
            dim = idea.assessment.lowest_dimension()
            critiques = [
                Critique(
                    id=f"auto-m{methodology.revision}-{idea.id}",
                    source="agent",
                    target_idea=idea.id,
                    text=idea.assessment.narratives.get(dim, f"weakest dimension: {dim}")
                    or f"weakest dimension: {dim}",
                )
            ]
            self._events(
                "critique",
                {"critique": critiques[0].to_dict(), "context": "methodology_fallback"},
            )
        prompt = build_prompt(
            "refine-methodology",
            {
                "idea_id": methodology.idea_id,
                "sections_json": json.dumps([[h, b] for h, b in methodology.sections]),
                "critique_ids": "\n".join(c.id for c in critiques),
                "critiques": "\n".join(f"{c.id}: {c.text}" for c in critiques),
                "literature_titles": "\n".join(r.title for r in literature[:15]),
            },
            respond_with='{"sections": [["heading", "body"], ...], "addressed": ["id"]}',
        )
        reply = self.gateway.complete_structured(
            "methodologist",
            prompt,
            {"sections": "list", "addressed": "list"},
            validator=lambda p: _sections_validator(p, methodology.headings()),
        )
        known = {c.id for c in critiques}
        addressed = tuple(str(a) for a in reply["addressed"] if str(a) in known)
        return Methodology(
            idea_id=methodology.idea_id,
            sections=tuple((h, b) for h, b in reply["sections"]),
            revision=methodology.revision + 1,
            change_log=methodology.change_log + addressed,
        )


def _sections_validator(parsed: dict[str, Any], required: Sequence[str]) -> str | None:
    sections = parsed.get("sections")
    if not isinstance(sections, list) or len(sections) < 3:
        return "sections must be a list with at least 3 entries"
    for section in sections:
        if (
            not isinstance(section, (list, tuple))
            or len(section) != 2
            or not all(isinstance(part, str) for part in section)
        ):
            return "each section must be a [heading, body] pair of strings"
    headings = {h for h, _ in sections}
    missing = [h for h in required if h not in headings]
    if missing:
        return f"missing required section(s): {', '.join(missing)}"
    return None

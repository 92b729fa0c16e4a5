"""Shared vocabulary types used by every agent in the loop.

All types are immutable value objects; updated variants are produced with
:func:`dataclasses.replace`. Mutation of session state happens only through
the session store.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

ASSESSMENT_DIMENSIONS = (
    "coherence",
    "credibility",
    "verifiability",
    "novelty",
    "alignment",
)

# Uniform by default; the overall score is a weighted summation and the
# weights are configurable per session.
DEFAULT_ASSESSMENT_WEIGHTS = (0.2, 0.2, 0.2, 0.2, 0.2)

SCORE_MIN = 0.0
SCORE_MAX = 10.0

_OVERALL_TOLERANCE = 1e-9


class DomainError(ValueError):
    """Invariant violation on a domain value."""


@dataclass(frozen=True)
class MetricContract:
    """Uniform contract for extracting one experiment metric.

    Exactly one extraction source is configured: either the last stdout line
    matching ``METRIC <name> <float>`` or a JSON metrics file relative to the
    run working directory.
    """

    name: str
    direction: str  # "higher-better" | "lower-better"
    source: str = "stdout"  # "stdout" | "file"
    metrics_path: str | None = None

    def __post_init__(self) -> None:
        if self.direction not in ("higher-better", "lower-better"):
            raise DomainError(f"metric direction invalid: {self.direction!r}")
        if self.source == "stdout":
            if self.metrics_path is not None:
                raise DomainError("stdout extraction must not set metrics_path")
        elif self.source == "file":
            if not self.metrics_path:
                raise DomainError("file extraction requires metrics_path")
        else:
            raise DomainError(f"metric source invalid: {self.source!r}")

    def better(self, candidate: float, reference: float) -> bool:
        """Strict improvement of ``candidate`` over ``reference``."""
        if self.direction == "higher-better":
            return candidate > reference
        return candidate < reference

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "direction": self.direction,
            "source": self.source,
            "metrics_path": self.metrics_path,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricContract":
        return cls(
            name=d["name"],
            direction=d["direction"],
            source=d.get("source", "stdout"),
            metrics_path=d.get("metrics_path"),
        )


@dataclass(frozen=True)
class TaskSpec:
    """A research task: description, baseline location, and metric contract."""

    id: str
    title: str
    description: str
    baseline_path: str
    run_command: str
    metric: MetricContract
    mode_hints: str = "auto"  # "review" | "deep" | "auto"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "description": self.description,
            "baseline_path": self.baseline_path,
            "run_command": self.run_command,
            "metric": self.metric.to_dict(),
            "mode_hints": self.mode_hints,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TaskSpec":
        return cls(
            id=d["id"],
            title=d.get("title", d["id"]),
            description=d["description"],
            baseline_path=d["baseline_path"],
            run_command=d["run_command"],
            metric=MetricContract.from_dict(d["metric"]),
            mode_hints=d.get("mode_hints", "auto"),
        )


@dataclass(frozen=True)
class ValidationReport:
    problems: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.problems


def validate_task(spec: TaskSpec) -> ValidationReport:
    """Check every TaskSpec invariant; an empty report means the spec is usable."""
    problems: list[str] = []
    if not spec.description.strip():
        problems.append("description empty")
    if not Path(spec.baseline_path).exists():
        problems.append("baseline_path not found")
    if not spec.run_command.strip():
        problems.append("run_command empty")
    if spec.mode_hints not in ("review", "deep", "auto"):
        problems.append(f"mode_hints invalid: {spec.mode_hints!r}")
    return ValidationReport(tuple(problems))


@dataclass(frozen=True)
class LiteratureRecord:
    """A retrieved paper: abstract always, full text when downloaded."""

    id: str
    title: str
    abstract: str
    url: str = ""
    full_text: str | None = None
    relevance: float | None = None
    origin_keywords: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.relevance is not None and not (0.0 <= self.relevance <= 1.0):
            raise DomainError(f"relevance out of [0,1]: {self.relevance}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "url": self.url,
            "full_text": self.full_text,
            "relevance": self.relevance,
            "origin_keywords": list(self.origin_keywords),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LiteratureRecord":
        return cls(
            id=str(d["id"]),
            title=d.get("title", ""),
            abstract=d.get("abstract", ""),
            url=d.get("url", ""),
            full_text=d.get("full_text"),
            relevance=d.get("relevance"),
            origin_keywords=tuple(d.get("origin_keywords", ())),
        )


def normalize_combination(combination: Iterable[str]) -> tuple[str, ...]:
    """Lowercase and trim a keyword combination; drops empty terms."""
    return tuple(t.strip().lower() for t in combination if t and t.strip())


@dataclass(frozen=True)
class KeywordSet:
    """One round of keyword combinations; generation 0 comes from the task,
    later generations from full-text expansion."""

    combinations: tuple[tuple[str, ...], ...]
    generation: int = 0

    def __post_init__(self) -> None:
        normalized = [normalize_combination(c) for c in self.combinations]
        if len(set(normalized)) != len(normalized):
            raise DomainError("duplicate keyword combinations after normalization")
        for combo in normalized:
            if not 1 <= len(combo) <= 5:
                raise DomainError(f"combination must have 1-5 terms: {combo}")

    @classmethod
    def build(
        cls, raw: Iterable[Iterable[str]], generation: int = 0
    ) -> "KeywordSet":
        """Normalize and de-duplicate raw combinations, preserving order."""
        seen: dict[tuple[str, ...], None] = {}
        for combo in raw:
            norm = normalize_combination(combo)
            if norm and 1 <= len(norm) <= 5:
                seen.setdefault(norm, None)
        return cls(tuple(seen.keys()), generation)

    def normalized(self) -> set[tuple[str, ...]]:
        return {normalize_combination(c) for c in self.combinations}

    def to_dict(self) -> dict[str, Any]:
        return {
            "combinations": [list(c) for c in self.combinations],
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "KeywordSet":
        return cls(
            tuple(tuple(c) for c in d["combinations"]),
            d.get("generation", 0),
        )


@dataclass(frozen=True)
class Critique:
    """Feedback attached to one idea, either human-provided or agent-generated."""

    id: str
    source: str  # "human" | "agent"
    target_idea: str
    text: str
    created_at: str = ""

    def __post_init__(self) -> None:
        if self.source not in ("human", "agent"):
            raise DomainError(f"critique source invalid: {self.source!r}")
        if not self.text.strip():
            raise DomainError("critique text empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "target_idea": self.target_idea,
            "text": self.text,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Critique":
        return cls(
            id=d["id"],
            source=d["source"],
            target_idea=d["target_idea"],
            text=d["text"],
            created_at=d.get("created_at", ""),
        )


@dataclass(frozen=True)
class Assessment:
    """Five-dimension scoring of an idea with a weighted-sum overall score."""

    coherence: float
    credibility: float
    verifiability: float
    novelty: float
    alignment: float
    narratives: Mapping[str, str]
    overall: float
    weights_used: tuple[float, ...]

    def __post_init__(self) -> None:
        for dim in ASSESSMENT_DIMENSIONS:
            value = getattr(self, dim)
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise DomainError(f"{dim} score out of [0,10]: {value}")
        validate_weights(self.weights_used)
        expected = sum(w * s for w, s in zip(self.weights_used, self.scores()))
        if abs(self.overall - expected) > _OVERALL_TOLERANCE:
            raise DomainError(
                f"overall {self.overall} != weighted sum {expected}"
            )

    def scores(self) -> tuple[float, ...]:
        return tuple(getattr(self, dim) for dim in ASSESSMENT_DIMENSIONS)

    def lowest_dimension(self) -> str:
        pairs = list(zip(ASSESSMENT_DIMENSIONS, self.scores()))
        return min(pairs, key=lambda p: (p[1], p[0]))[0]

    @classmethod
    def build(
        cls,
        scores: Mapping[str, float],
        weights: Iterable[float] = DEFAULT_ASSESSMENT_WEIGHTS,
        narratives: Mapping[str, str] | None = None,
    ) -> "Assessment":
        weights = tuple(weights)
        validate_weights(weights)
        values = tuple(float(scores[d]) for d in ASSESSMENT_DIMENSIONS)
        overall = sum(w * s for w, s in zip(weights, values))
        return cls(
            *values,
            narratives=dict(narratives or {}),
            overall=overall,
            weights_used=weights,
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {dim: getattr(self, dim) for dim in ASSESSMENT_DIMENSIONS}
        d["narratives"] = dict(self.narratives)
        d["overall"] = self.overall
        d["weights_used"] = list(self.weights_used)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Assessment":
        return cls(
            *(d[dim] for dim in ASSESSMENT_DIMENSIONS),
            narratives=dict(d.get("narratives", {})),
            overall=d["overall"],
            weights_used=tuple(d["weights_used"]),
        )


def validate_weights(weights: Iterable[float]) -> tuple[float, ...]:
    weights = tuple(weights)
    if len(weights) != len(ASSESSMENT_DIMENSIONS):
        raise DomainError(f"need {len(ASSESSMENT_DIMENSIONS)} weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise DomainError("weights must be non-negative")
    if abs(sum(weights) - 1.0) > _OVERALL_TOLERANCE:
        raise DomainError(f"weights must sum to 1, got {sum(weights)}")
    return weights


@dataclass(frozen=True)
class IdeaNode:
    """One idea in the self-evolution forest."""

    id: str
    text: str
    parent: str | None = None
    depth: int = 0
    assessment: Assessment | None = None
    critiques: tuple[Critique, ...] = ()
    status: str = "candidate"  # "candidate" | "selected" | "pruned"
    cites: tuple[str, ...] = ()
    consumed_critiques: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DomainError("idea text empty")
        if (self.depth == 0) != (self.parent is None):
            raise DomainError("depth 0 iff parent absent")
        if self.depth < 0:
            raise DomainError("depth must be >= 0")
        if self.status not in ("candidate", "selected", "pruned"):
            raise DomainError(f"idea status invalid: {self.status!r}")

    def with_assessment(self, assessment: Assessment) -> "IdeaNode":
        return replace(self, assessment=assessment)

    def with_status(self, status: str) -> "IdeaNode":
        return replace(self, status=status)

    def with_critique(self, critique: Critique) -> "IdeaNode":
        return replace(self, critiques=self.critiques + (critique,))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "parent": self.parent,
            "depth": self.depth,
            "assessment": self.assessment.to_dict() if self.assessment else None,
            "critiques": [c.to_dict() for c in self.critiques],
            "status": self.status,
            "cites": list(self.cites),
            "consumed_critiques": list(self.consumed_critiques),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "IdeaNode":
        assessment = d.get("assessment")
        return cls(
            id=d["id"],
            text=d["text"],
            parent=d.get("parent"),
            depth=d.get("depth", 0),
            assessment=Assessment.from_dict(assessment) if assessment else None,
            critiques=tuple(Critique.from_dict(c) for c in d.get("critiques", ())),
            status=d.get("status", "candidate"),
            cites=tuple(d.get("cites", ())),
            consumed_critiques=tuple(d.get("consumed_critiques", ())),
        )


def check_forest(nodes: Mapping[str, IdeaNode]) -> list[str]:
    """Verify parent/depth relations form a forest; returns violations."""
    problems: list[str] = []
    for node in nodes.values():
        if node.parent is not None:
            parent = nodes.get(node.parent)
            if parent is None:
                problems.append(f"{node.id}: parent {node.parent} missing")
            elif node.depth != parent.depth + 1:
                problems.append(
                    f"{node.id}: depth {node.depth} != parent depth {parent.depth} + 1"
                )
    # Cycle detection by walking parent chains with a visited set.
    for start in nodes:
        seen: set[str] = set()
        current: str | None = start
        while current is not None:
            if current in seen:
                problems.append(f"cycle through {current}")
                break
            seen.add(current)
            parent_node = nodes.get(current)
            current = parent_node.parent if parent_node else None
    return problems


REQUIRED_METHODOLOGY_SECTIONS = (
    "Objectives & Hypotheses",
    "Variables & Interrelationships",
    "Mechanism/Procedure",
    "Data & Analysis",
    "Integration Points into Baseline",
)


@dataclass(frozen=True)
class Methodology:
    """Structured, implementable document built from an idea.

    revision 0 is the initialized framework; each refinement bumps the
    revision and appends the addressed critique ids to the change log.
    """

    idea_id: str
    sections: tuple[tuple[str, str], ...]
    revision: int = 0
    change_log: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.sections) < 3:
            raise DomainError("methodology needs at least 3 sections")
        if self.revision < 0:
            raise DomainError("revision must be >= 0")

    def headings(self) -> tuple[str, ...]:
        return tuple(h for h, _ in self.sections)

    def section(self, heading: str) -> str | None:
        for h, body in self.sections:
            if h == heading:
                return body
        return None

    def render_text(self) -> str:
        parts = []
        for heading, body in self.sections:
            parts.append(f"## {heading}\n{body}")
        return "\n\n".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "idea_id": self.idea_id,
            "sections": [[h, b] for h, b in self.sections],
            "revision": self.revision,
            "change_log": list(self.change_log),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Methodology":
        return cls(
            idea_id=d["idea_id"],
            sections=tuple((h, b) for h, b in d["sections"]),
            revision=d.get("revision", 0),
            change_log=tuple(d.get("change_log", ())),
        )


_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def word_ngrams(text: str, n: int = 3) -> set[tuple[str, ...]]:
    """Lowercase word n-gram shingles; short texts collapse to one shingle."""
    words = tokenize(text)
    if not words:
        return set()
    if len(words) < n:
        return {tuple(words)}
    return {tuple(words[i : i + n]) for i in range(len(words) - n + 1)}


def jaccard_similarity(a: str, b: str, n: int = 3) -> float:
    """Jaccard overlap of word n-grams; 0.0 when both texts are empty."""
    grams_a = word_ngrams(a, n)
    grams_b = word_ngrams(b, n)
    union = grams_a | grams_b
    if not union:
        return 0.0
    return len(grams_a & grams_b) / len(union)

"""Deterministic scripted mock backend.

Two layers:

* script rules — ordered (role, intent, substring) matchers with reply
  queues, so tests can pin exact answers and inject failures;
* a synthesizer — derives a plausible, schema-correct reply for every
  prompt intent from a stable hash of (seed, inputs), so a full pipeline
  run needs no hand-written fixtures and is bit-identical across runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .domain import ASSESSMENT_DIMENSIONS, tokenize
from .gateway import TransientBackendError
from .prompts import parse_fields, parse_intent

_STOPWORDS = {
    "the", "a", "an", "and", "or", "of", "for", "to", "in", "on", "with",
    "by", "from", "into", "using", "via", "that", "this", "is", "are",
    "task", "model", "method", "based",
}

_APPROACHES = (
    "adaptive", "hierarchical", "contrastive", "sparse", "equivariant",
    "curriculum", "uncertainty-aware", "graph-informed", "multi-scale",
    "hybrid", "self-distilled", "attention-gated", "residual", "bayesian",
    "prototype-driven",
)
_MECHANISMS = (
    "feature fusion", "representation pooling", "gradient reweighting",
    "token routing", "message passing", "context gating", "loss shaping",
    "embedding alignment", "head calibration", "augmentation scheduling",
    "memory replay", "prompt conditioning", "layer freezing",
    "spectral filtering", "kernel mixing",
)
_TWISTS = (
    "with staged warmup", "under a consistency objective",
    "guided by validation drift", "with learned temperature",
    "through auxiliary supervision", "using cached statistics",
    "with stochastic depth", "behind a gating threshold",
    "via low-rank updates", "with boundary-aware sampling",
    "under budget constraints", "with periodic re-anchoring",
    "through dual-branch distillation", "with frequency-domain cues",
    "using neighborhood smoothing",
)
_REFINEMENTS = (
    "sharpen the selection rule", "stabilize the update schedule",
    "decouple the shared encoder", "re-balance the objective terms",
    "tighten the sampling window", "regularize the fused heads",
    "cache intermediate statistics", "prune redundant branches",
    "calibrate confidence estimates", "simplify the control path",
)


def _unit(seed: int, *parts: str) -> float:
    key = f"{seed}|" + "|".join(parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def _pick(bank: Sequence[str], seed: int, *parts: str) -> str:
    return bank[int(_unit(seed, *parts) * len(bank))]


def _salient_tokens(text: str, limit: int = 12) -> list[str]:
    seen: dict[str, None] = {}
    for token in tokenize(text):
        if len(token) > 2 and token not in _STOPWORDS:
            seen.setdefault(token, None)
    return list(seen.keys())[:limit]


@dataclass
class ScriptRule:
    """Ordered matcher with a queue of replies.

    A reply is a string, ``{"text": ...}``, or ``{"error": ...}`` (raises a
    retryable backend failure). With ``repeat`` the last reply never
    exhausts.
    """

    replies: list[Any]
    role: str | None = None
    intent: str | None = None
    contains: str | None = None
    repeat: bool = False
    _used: int = field(default=0, repr=False)

    def matches(self, role: str, prompt: str, intent: str) -> bool:
        if self.role is not None and self.role != role:
            return False
        if self.intent is not None and self.intent != intent:
            return False
        if self.contains is not None and self.contains not in prompt:
            return False
        return self.repeat or self._used < len(self.replies)

    def take(self) -> Any:
        index = min(self._used, len(self.replies) - 1)
        self._used += 1
        return self.replies[index]


def load_script(path: str | Path) -> list[ScriptRule]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ScriptRule(
            replies=list(entry["replies"]),
            role=entry.get("role"),
            intent=entry.get("intent"),
            contains=entry.get("contains"),
            repeat=bool(entry.get("repeat", False)),
        )
        for entry in raw
    ]


class MockBackend:
    """Scripted, deterministic stand-in for a chat-completion backend."""

    deterministic = True

    def __init__(
        self,
        seed: int = 0,
        script: Sequence[ScriptRule] | None = None,
        synthesize: bool = True,
        backend_id: str = "mock",
        rate_in_usd: float = 1e-6,
        rate_out_usd: float = 2e-6,
        max_concurrency: int = 8,
    ):
        self.seed = seed
        self.script = list(script or [])
        self.synthesize = synthesize
        self.backend_id = backend_id
        self.rate_in_usd = rate_in_usd
        self.rate_out_usd = rate_out_usd
        self.max_concurrency = max_concurrency

    def send(
        self, role: str, prompt: str, context: Sequence[str], temperature: float
    ) -> tuple[str, int, int]:
        intent = parse_intent(prompt)
        for rule in self.script:
            if rule.matches(role, prompt, intent):
                reply = rule.take()
                if isinstance(reply, dict) and "error" in reply:
                    raise TransientBackendError(str(reply["error"]))
                text = reply["text"] if isinstance(reply, dict) else str(reply)
                return self._package(prompt, context, text)
        if not self.synthesize:
            raise LookupError(
                f"no scripted reply for role={role!r} intent={intent!r}"
            )
        return self._package(prompt, context, self._synthesize(role, prompt, intent))

    def _package(
        self, prompt: str, context: Sequence[str], text: str
    ) -> tuple[str, int, int]:
        tokens_in = len(prompt.split()) + sum(len(c.split()) for c in context)
        tokens_out = max(1, len(text.split()))
        return text, tokens_in, tokens_out

    # -- synthesizer ---------------------------------------------------------

    def _synthesize(self, role: str, prompt: str, intent: str) -> str:
        fields = parse_fields(prompt)
        handler = getattr(self, "_synth_" + intent.replace("-", "_"), None)
        if handler is None:
            return f"ok: {intent or role}"
        return handler(fields)

    def _synth_generate_keywords(self, fields: dict[str, str]) -> str:
        limit = int(fields.get("max_combinations", "8"))
        tokens = _salient_tokens(
            fields.get("task_title", "") + " " + fields.get("task_description", "")
        )
        combos: list[list[str]] = []
        for i in range(0, len(tokens) - 1, 2):
            combos.append([tokens[i], tokens[i + 1]])
        if not combos and tokens:
            combos.append([tokens[0]])
        return json.dumps({"combinations": combos[:limit]})

    def _synth_score_relevance(self, fields: dict[str, str]) -> str:
        record_id = fields.get("record_id", "")
        score = round(_unit(self.seed, "relevance", record_id), 3)
        return json.dumps({"score": score})

    def _synth_expand_keywords(self, fields: dict[str, str]) -> str:
        known = set(tokenize(fields.get("known_terms", "")))
        fresh: list[str] = []
        for token in _salient_tokens(fields.get("full_texts", ""), limit=40):
            if token not in known:
                fresh.append(token)
        combos = [
            [fresh[i], fresh[i + 1]] for i in range(0, min(len(fresh) - 1, 7), 2)
        ]
        return json.dumps({"combinations": combos})

    def _synth_summarize_file(self, fields: dict[str, str]) -> str:
        path = fields.get("path", "?")
        symbols = [s for s in fields.get("symbols", "").split("\n") if s.strip()]
        return (
            f"{path}: defines {len(symbols)} top-level symbol(s) "
            f"({', '.join(symbols[:4]) if symbols else 'none'}); part of the baseline pipeline."
        )

    def _synth_summarize_repo(self, fields: dict[str, str]) -> str:
        files = [f for f in fields.get("files", "").split("\n") if f.strip()]
        return (
            f"Baseline spanning {len(files)} file(s): entry logic, data handling, "
            f"and metric reporting are organized across {', '.join(files[:5])}."
        )

    def _idea_text(self, task_tokens: list[str], key: str) -> str:
        focus = task_tokens[int(_unit(self.seed, "focus", key) * len(task_tokens))] if task_tokens else "the objective"
        approach = _pick(_APPROACHES, self.seed, "approach", key)
        mechanism = _pick(_MECHANISMS, self.seed, "mechanism", key)
        twist = _pick(_TWISTS, self.seed, "twist", key)
        return (
            f"Apply {approach} {mechanism} to improve {focus} {twist}, "
            f"validated against the existing baseline protocol."
        )

    def _synth_generate_ideas(self, fields: dict[str, str]) -> str:
        count = int(fields.get("count", "1"))
        task_tokens = _salient_tokens(fields.get("task_description", ""))
        lit_ids = [l for l in fields.get("literature_ids", "").split("\n") if l.strip()]
        ideas = []
        for i in range(count):
            key = f"idea|{fields.get('task_id', '')}|{i}"
            cites = []
            if lit_ids:
                cites.append(lit_ids[int(_unit(self.seed, "cite", key) * len(lit_ids))])
            ideas.append({"text": self._idea_text(task_tokens, key), "cites": cites})
        return json.dumps({"ideas": ideas})

    def _synth_evolve_idea(self, fields: dict[str, str]) -> str:
        count = int(fields.get("count", "3"))
        parent_id = fields.get("parent_id", "")
        parent_words = fields.get("parent_text", "").split()
        theme = " ".join(parent_words[1:5]) if len(parent_words) > 5 else fields.get("parent_text", "")
        critique_tokens = _salient_tokens(fields.get("critiques", ""), limit=6)
        children = []
        for j in range(count):
            key = f"child|{parent_id}|{j}"
            refinement = _pick(_REFINEMENTS, self.seed, "refine", key)
            twist = _pick(_TWISTS, self.seed, "ctwist", key)
            hint = critique_tokens[j % len(critique_tokens)] if critique_tokens else "feedback"
            children.append(
                {
                    "text": (
                        f"Extend {theme} and {refinement} {twist}, "
                        f"responding to the {hint} concern raised in review."
                    ),
                    "cites": [],
                }
            )
        return json.dumps({"children": children})

    def _synth_assess_idea(self, fields: dict[str, str]) -> str:
        text = fields.get("idea_text", "")
        payload: dict[str, Any] = {}
        narratives: dict[str, str] = {}
        for dim in ASSESSMENT_DIMENSIONS:
            score = round(3.0 + 7.0 * _unit(self.seed, "assess", dim, text), 1)
            payload[dim] = score
            narratives[dim] = (
                f"{dim.capitalize()} judged at {score}: "
                f"{_pick(_REFINEMENTS, self.seed, 'nar', dim, text)} to strengthen it."
            )
        payload["narratives"] = narratives
        return json.dumps(payload)

    def _synth_init_methodology(self, fields: dict[str, str]) -> str:
        idea = fields.get("idea_text", "")
        anchor = " ".join(idea.split()[:8])
        sections = [
            ["Objectives & Hypotheses",
             f"Primary objective: realize '{anchor}' as a measurable improvement; "
             f"hypothesis: the mechanism raises the task metric over the baseline."],
            ["Variables & Interrelationships",
             "Independent: the inserted mechanism and its gating parameters. "
             "Dependent: the task metric. Controls: data splits, seeds, budget."],
            ["Mechanism/Procedure",
             f"Procedure: {idea} Integrate incrementally; keep interfaces stable."],
            ["Data & Analysis",
             "Use the task's standard split; track the contract metric per run; "
             "compare against the recorded baseline value."],
            ["Integration Points into Baseline",
             "Insert at the model-construction and training-step seams identified "
             "by the code review; avoid touching the evaluation harness."],
        ]
        return json.dumps({"sections": sections})

    def _synth_refine_methodology(self, fields: dict[str, str]) -> str:
        raw = fields.get("sections_json", "[]")
        critique_ids = [c for c in fields.get("critique_ids", "").split("\n") if c.strip()]
        try:
            sections = json.loads(raw)
        except json.JSONDecodeError:
            sections = []
        refined = [
            [heading, body + " Refined: " + _pick(_REFINEMENTS, self.seed, "mref", heading) + "."]
            for heading, body in sections
        ]
        return json.dumps({"sections": refined, "addressed": critique_ids})

    def _synth_plan_stages(self, fields: dict[str, str]) -> str:
        files = [f for f in fields.get("files", "").split("\n") if f.strip()]
        target = files[0] if files else "main.py"
        stages = [
            {
                "id": "stage-1",
                "description": "stage-1: architectural insertion of the core mechanism",
                "targets": [target],
                "depends_on": [],
                "level": "architectural",
            },
            {
                "id": "stage-2",
                "description": "stage-2: algorithmic tuning of the inserted mechanism",
                "targets": [target],
                "depends_on": ["stage-1"],
                "level": "algorithmic",
            },
            {
                "id": "stage-3",
                "description": "stage-3: optimization pass over training settings",
                "targets": [target],
                "depends_on": ["stage-1"],
                "level": "optimization",
            },
        ]
        return json.dumps({"stages": stages})

    def _synth_debug_strategy(self, fields: dict[str, str]) -> str:
        files = [f for f in fields.get("implicated_files", "").split("\n") if f.strip()]
        where = files[0] if files else "the entry file"
        digest = fields.get("traceback_digest", "").split("\n")[-1]
        return f"Patch {where}: address '{digest}' by guarding the failing call and retry."

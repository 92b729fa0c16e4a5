"""Literature acquisition in two modes: broad review and deep research.

Review mode runs one keyword round, fetches, scores, and keeps records
that clear the relevance floor. Deep mode additionally downloads full
texts, expands keywords from them, and repeats until the expansion is
empty or the round budget runs out. Auto mode starts in review and
escalates to deep when fewer than half the paper budget clears the floor.
"""

from __future__ import annotations

import json
import logging
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .domain import KeywordSet, LiteratureRecord, TaskSpec, normalize_combination
from .gateway import LLMGateway
from .prompts import build_prompt

logger = logging.getLogger(__name__)

SCORING_WIDTH = 8
# Fetch a wider pool than the keep budget so the floor filter has slack.
FETCH_OVERSAMPLE = 2


class ProviderUnavailable(RuntimeError):
    pass


class EmptyExpansion(Exception):
    """Deep-research termination: the model yielded no new combinations."""


@dataclass(frozen=True)
class SurveyConfig:
    mode: str = "auto"  # "review" | "deep" | "auto"
    max_papers: int = 50
    keywords_per_round: int = 8
    deep_rounds: int = 2
    relevance_floor: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in ("review", "deep", "auto"):
            raise ValueError(f"survey mode invalid: {self.mode!r}")
        if self.max_papers < 1:
            raise ValueError("max_papers must be >= 1")
        if not 0.0 <= self.relevance_floor <= 1.0:
            raise ValueError("relevance_floor must be in [0,1]")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SurveyConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "max_papers": self.max_papers,
            "keywords_per_round": self.keywords_per_round,
            "deep_rounds": self.deep_rounds,
            "relevance_floor": self.relevance_floor,
        }


@dataclass(frozen=True)
class SurveyResult:
    records: tuple[LiteratureRecord, ...]
    keyword_history: tuple[KeywordSet, ...]
    mode_used: str
    truncated: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "records": [r.to_dict() for r in self.records],
            "keyword_history": [k.to_dict() for k in self.keyword_history],
            "mode_used": self.mode_used,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SurveyResult":
        return cls(
            records=tuple(LiteratureRecord.from_dict(r) for r in d["records"]),
            keyword_history=tuple(KeywordSet.from_dict(k) for k in d["keyword_history"]),
            mode_used=d["mode_used"],
            truncated=d.get("truncated", False),
        )


class PaperSearchProvider(Protocol):
    def query(
        self, combinations: Sequence[Sequence[str]], limit: int
    ) -> list[dict[str, Any]]:
        """Returns records as {id, title, abstract, url, year}."""
        ...

    def fetch_full_text(self, record_id: str) -> str: ...


class FileProvider:
    """File-backed provider: reads fixture JSON records from a directory.

    Each ``*.json`` file holds one record or a list of records. A record
    matches a query when every term of some keyword combination occurs in
    its title or abstract.
    """

    def __init__(self, fixtures_dir: str | Path):
        self.fixtures_dir = Path(fixtures_dir)
        self._records: dict[str, dict[str, Any]] = {}
        for path in sorted(self.fixtures_dir.glob("*.json")):
            loaded = json.loads(path.read_text(encoding="utf-8"))
            for raw in loaded if isinstance(loaded, list) else [loaded]:
                self._records[str(raw["id"])] = raw

    def query(
        self, combinations: Sequence[Sequence[str]], limit: int
    ) -> list[dict[str, Any]]:
        matched = []
        for record_id in sorted(self._records):
            raw = self._records[record_id]
            haystack = (raw.get("title", "") + " " + raw.get("abstract", "")).lower()
            if any(all(t.lower() in haystack for t in combo) for combo in combinations):
                matched.append(
                    {k: raw.get(k) for k in ("id", "title", "abstract", "url", "year")}
                )
            if len(matched) >= limit:
                break
        return matched

    def fetch_full_text(self, record_id: str) -> str:
        raw = self._records.get(record_id)
        if raw is None or not raw.get("full_text"):
            raise KeyError(f"no full text for {record_id}")
        return raw["full_text"]


class HTTPProvider:
    """Paper-search service over HTTP/JSON: POST /search, GET /fulltext."""

    def __init__(self, base_url: str, timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def query(
        self, combinations: Sequence[Sequence[str]], limit: int
    ) -> list[dict[str, Any]]:
        body = json.dumps(
            {"combinations": [list(c) for c in combinations], "limit": limit}
        ).encode("utf-8")
        request = urllib.request.Request(
            self.base_url + "/search",
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                return json.loads(response.read().decode("utf-8"))["records"]
        except Exception as exc:
            raise ProviderUnavailable(str(exc)) from exc

    def fetch_full_text(self, record_id: str) -> str:
        url = f"{self.base_url}/fulltext?id={urllib.parse.quote(record_id)}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as response:
                return json.loads(response.read().decode("utf-8"))["full_text"]
        except Exception as exc:
            raise ProviderUnavailable(str(exc)) from exc


def matching_combination(
    record: LiteratureRecord, combinations: Sequence[Sequence[str]]
) -> tuple[str, ...]:
    haystack = (record.title + " " + record.abstract).lower()
    for combo in combinations:
        if all(t.lower() in haystack for t in combo):
            return tuple(combo)
    return tuple(combinations[0]) if combinations else ()


class SurveyAgent:
    def __init__(
        self,
        gateway: LLMGateway,
        provider: PaperSearchProvider,
        events: Callable[[str, dict[str, Any]], Any] | None = None,
        scoring_width: int = SCORING_WIDTH,
    ):
        self.gateway = gateway
        self.provider = provider
        self._events = events or (lambda kind, payload: None)
        self.scoring_width = max(1, scoring_width)

    # -- keyword generation ----------------------------------------------------

    def generate_keywords(self, task: TaskSpec, cfg: SurveyConfig) -> KeywordSet:
        prompt = build_prompt(
            "generate-keywords",
            {
                "task_id": task.id,
                "task_title": task.title,
                "task_description": task.description,
                "max_combinations": str(cfg.keywords_per_round),
            },
            respond_with='{"combinations": [["term", ...], ...]}',
        )
        reply = self.gateway.complete_structured(
            "surveyor",
            prompt,
            {"combinations": "list"},
            validator=_combinations_validator,
        )
        keyword_set = KeywordSet.build(
            reply["combinations"][: cfg.keywords_per_round], generation=0
        )
        return keyword_set

    def expand_keywords(
        self,
        full_text_records: Sequence[LiteratureRecord],
        history: Sequence[KeywordSet],
    ) -> KeywordSet:
        for record in full_text_records:
            if not record.full_text:
                raise ValueError(f"record {record.id} has no full_text")
        seen: set[tuple[str, ...]] = set()
        known_terms: list[str] = []
        for keyword_set in history:
            for combo in keyword_set.combinations:
                seen.add(normalize_combination(combo))
                known_terms.extend(combo)
        prompt = build_prompt(
            "expand-keywords",
            {
                "full_texts": "\n".join(r.full_text or "" for r in full_text_records),
                "known_terms": "\n".join(known_terms),
            },
            respond_with='{"combinations": [["term", ...], ...]}',
        )
        reply = self.gateway.complete_structured(
            "surveyor", prompt, {"combinations": "list"}
        )
        fresh = [
            combo
            for combo in reply["combinations"]
            if isinstance(combo, list) and normalize_combination(combo) not in seen
        ]
        generation = max((k.generation for k in history), default=-1) + 1
        keyword_set = KeywordSet.build(fresh, generation=generation)
        if not keyword_set.combinations:
            raise EmptyExpansion(f"no new combinations at generation {generation}")
        return keyword_set

    # -- scoring ----------------------------------------------------------------

    def score_relevance(self, record: LiteratureRecord, task: TaskSpec) -> float:
        if not record.abstract.strip():
            raise ValueError(f"record {record.id} has empty abstract")
        prompt = build_prompt(
            "score-relevance",
            {
                "record_id": record.id,
                "title": record.title,
                "abstract": record.abstract,
                "task_description": task.description,
            },
            respond_with='{"score": 0.0}',
        )
        reply = self.gateway.complete_structured(
            "surveyor", prompt, {"score": "number"}
        )
        score = float(reply["score"])
        if not 0.0 <= score <= 1.0:
            clamped = min(1.0, max(0.0, score))
            self._events(
                "warning",
                {"code": "relevance_clamped", "record": record.id, "raw": score},
            )
            return clamped
        return score

    # -- the survey loop ----------------------------------------------------------

    def run_survey(self, task: TaskSpec, cfg: SurveyConfig) -> SurveyResult:
        mode = cfg.mode
        if mode == "auto" and task.mode_hints in ("review", "deep"):
            mode = task.mode_hints
        escalate_auto = mode == "auto"
        effective = "review" if mode == "auto" else mode

        history: list[KeywordSet] = []
        pool: dict[str, LiteratureRecord] = {}
        truncated = False

        keyword_set = self.generate_keywords(task, cfg)
        history.append(keyword_set)
        try:
            self._fetch_and_score(task, cfg, keyword_set, pool)
        except ProviderUnavailable:
            if not pool:
                raise
            truncated = True

        kept = self._kept(pool, cfg)
        mode_used = effective
        if escalate_auto and len(kept) < cfg.max_papers / 2:
            effective = "deep"
            mode_used = "deep"

        if effective == "deep" and not truncated:
            for _ in range(cfg.deep_rounds):
                kept = self._kept(pool, cfg)
                self._download_full_texts(kept, pool)
                eligible = [r for r in self._kept(pool, cfg) if r.full_text]
                if not eligible:
                    self._events("warning", {"code": "deep_no_full_texts"})
                    break
                try:
                    expansion = self.expand_keywords(eligible, history)
                except EmptyExpansion:
                    self._events("survey_expansion_empty", {"rounds": len(history)})
                    break
                history.append(expansion)
                try:
                    self._fetch_and_score(task, cfg, expansion, pool)
                except ProviderUnavailable:
                    truncated = True
                    break

        kept = self._kept(pool, cfg)
        return SurveyResult(
            records=tuple(kept),
            keyword_history=tuple(history),
            mode_used=mode_used,
            truncated=truncated,
        )

    def _fetch_and_score(
        self,
        task: TaskSpec,
        cfg: SurveyConfig,
        keyword_set: KeywordSet,
        pool: dict[str, LiteratureRecord],
    ) -> None:
        raw_records = self.provider.query(
            keyword_set.combinations, limit=cfg.max_papers * FETCH_OVERSAMPLE
        )
        fresh: list[LiteratureRecord] = []
        for raw in raw_records:
            record = LiteratureRecord.from_dict(raw)
            if record.id in pool:
                continue
            if not record.abstract.strip():
                self._events(
                    "warning", {"code": "empty_abstract_skipped", "record": record.id}
                )
                continue
            fresh.append(
                replace(
                    record,
                    origin_keywords=matching_combination(record, keyword_set.combinations),
                )
            )
        # Concurrent scoring; assembly is an in-order merge, independent of
        # completion order.
        if fresh:
            with ThreadPoolExecutor(max_workers=self.scoring_width) as pool_exec:
                scores = list(
                    pool_exec.map(lambda r: self.score_relevance(r, task), fresh)
                )
            for record, score in zip(fresh, scores):
                pool[record.id] = replace(record, relevance=score)

    def _download_full_texts(
        self, kept: Sequence[LiteratureRecord], pool: dict[str, LiteratureRecord]
    ) -> None:
        for record in kept:
            if record.full_text:
                continue
            try:
                text = self.provider.fetch_full_text(record.id)
            except ProviderUnavailable:
                raise
            except Exception as exc:
                # Full-text failures demote the record to abstract-only.
                self._events(
                    "warning",
                    {"code": "full_text_unavailable", "record": record.id, "detail": str(exc)},
                )
                continue
            pool[record.id] = replace(pool[record.id], full_text=text)

    def _kept(
        self, pool: dict[str, LiteratureRecord], cfg: SurveyConfig
    ) -> list[LiteratureRecord]:
        kept = [
            r
            for r in pool.values()
            if r.relevance is not None and r.relevance >= cfg.relevance_floor
        ]
        kept.sort(key=lambda r: (-(r.relevance or 0.0), r.id))
        return kept[: cfg.max_papers]


def _combinations_validator(parsed: dict[str, Any]) -> str | None:
    combos = parsed.get("combinations")
    if not isinstance(combos, list) or not combos:
        return "combinations must be a non-empty list"
    for combo in combos:
        if not isinstance(combo, list) or not all(isinstance(t, str) for t in combo):
            return "each combination must be a list of strings"
    return None


def combination_strings(sets: Iterable[KeywordSet]) -> list[str]:
    return [" ".join(combo) for ks in sets for combo in ks.combinations]

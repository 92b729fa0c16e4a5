from __future__ import annotations

import json

import pytest

from reloop.domain import KeywordSet, LiteratureRecord
from reloop.mockllm import ScriptRule
from reloop.survey import (
    EmptyExpansion,
    FileProvider,
    ProviderUnavailable,
    SurveyAgent,
    SurveyConfig,
)

from .conftest import EventCollector, make_gateway, make_task


def _fixture_corpus(tmp_path, count=60, with_full_text=True):
    papers = []
    for i in range(1, count + 1):
        papers.append(
            {
                "id": f"p{i:03d}",
                "title": f"Paper {i} on metric improvements",
                "abstract": f"This work studies how to improve the demo metric, variant {i}.",
                "url": f"https://x/p{i:03d}",
                "full_text": (
                    f"Full text {i}: spectral pooling and cascade distillation details."
                    if with_full_text
                    else None
                ),
            }
        )
    papers_dir = tmp_path / "papers"
    papers_dir.mkdir(exist_ok=True)
    (papers_dir / "corpus.json").write_text(json.dumps(papers), encoding="utf-8")
    return papers_dir, papers


def _score_script(scores: dict[str, float]) -> list[ScriptRule]:
    return [
        ScriptRule(
            replies=[json.dumps({"score": score})],
            intent="score-relevance",
            contains=record_id,
            repeat=True,
        )
        for record_id, score in scores.items()
    ]


def _agent(tmp_path, script=None, seed=0):
    papers_dir, papers = _fixture_corpus(tmp_path)
    gateway, _, events_gw = make_gateway(script=script or [], seed=seed)
    events = EventCollector()
    agent = SurveyAgent(gateway, FileProvider(papers_dir), events=events, scoring_width=1)
    return agent, papers, events


def test_generate_keywords_echoes_task_tokens(tmp_path):
    agent, _, _ = _agent(tmp_path)
    task = make_task(tmp_path, description="segmentation")
    keyword_set = agent.generate_keywords(task, SurveyConfig())
    assert keyword_set.generation == 0
    assert 1 <= len(keyword_set.combinations) <= 8
    assert any("segmentation" in combo for combo in keyword_set.combinations)


def test_generate_keywords_dedupes_raw_reply(tmp_path):
    script = [
        ScriptRule(
            replies=[json.dumps({"combinations": [["Yield", "Prediction"], ["yield", "prediction"], ["chem"]]})],
            intent="generate-keywords",
        )
    ]
    agent, _, _ = _agent(tmp_path, script=script)
    keyword_set = agent.generate_keywords(make_task(tmp_path), SurveyConfig())
    assert keyword_set.combinations == (("yield", "prediction"), ("chem",))


def test_score_relevance_scripted_and_clamped(tmp_path):
    script = _score_script({"p001": 0.9, "p002": 1.7})
    agent, papers, events = _agent(tmp_path, script=script)
    task = make_task(tmp_path)
    record1 = LiteratureRecord.from_dict(papers[0])
    record2 = LiteratureRecord.from_dict(papers[1])
    assert agent.score_relevance(record1, task) == 0.9
    assert agent.score_relevance(record2, task) == 1.0  # clamped
    assert any(p.get("code") == "relevance_clamped" for p in events.of("warning"))


def test_score_relevance_requires_abstract(tmp_path):
    agent, _, _ = _agent(tmp_path)
    record = LiteratureRecord(id="x", title="t", abstract="   ")
    with pytest.raises(ValueError):
        agent.score_relevance(record, make_task(tmp_path))


def test_expand_keywords_new_generation(tmp_path):
    script = [
        ScriptRule(
            replies=[json.dumps({"combinations": [["graph attention"], ["yield"]]})],
            intent="expand-keywords",
        )
    ]
    agent, papers, _ = _agent(tmp_path, script=script)
    records = [LiteratureRecord.from_dict(p) for p in papers[:3]]
    history = [KeywordSet.build([["metric", "improvements"]], generation=0)]
    expansion = agent.expand_keywords(records, history)
    assert expansion.generation == 1
    assert ("graph attention",) in expansion.combinations


def test_expand_keywords_disjointness_raises_empty_expansion(tmp_path):
    script = [
        ScriptRule(
            replies=[json.dumps({"combinations": [["metric", "improvements"]]})],
            intent="expand-keywords",
        )
    ]
    agent, papers, _ = _agent(tmp_path, script=script)
    records = [LiteratureRecord.from_dict(p) for p in papers[:3]]
    history = [KeywordSet.build([["metric", "improvements"]], generation=0)]
    with pytest.raises(EmptyExpansion):
        agent.expand_keywords(records, history)


def test_expand_keywords_requires_full_text(tmp_path):
    agent, papers, _ = _agent(tmp_path)
    record = LiteratureRecord(id="x", title="t", abstract="a", full_text=None)
    with pytest.raises(ValueError):
        agent.expand_keywords([record], [])


def _filter_sort_oracle(scores: dict[str, float], floor: float, cap: int) -> list[str]:
    kept = [(rid, s) for rid, s in scores.items() if s >= floor]
    kept.sort(key=lambda pair: (-pair[1], pair[0]))
    return [rid for rid, _ in kept[:cap]]


def test_review_mode_matches_filter_sort_oracle(tmp_path):
    # 60 fixture papers with scripted scores spread around the 0.5 floor
    scores = {f"p{i:03d}": round(((i * 37) % 100) / 100.0, 2) for i in range(1, 61)}
    agent, _, _ = _agent(tmp_path, script=_score_script(scores))
    cfg = SurveyConfig(mode="review", max_papers=50, relevance_floor=0.5)
    result = agent.run_survey(make_task(tmp_path), cfg)
    expected = _filter_sort_oracle(scores, 0.5, 50)
    assert [r.id for r in result.records] == expected
    assert all(r.relevance is not None and 0 <= r.relevance <= 1 for r in result.records)
    assert len(result.records) <= 50
    assert [k.generation for k in result.keyword_history] == [0]
    assert result.mode_used == "review"
    # non-increasing relevance with id tiebreak
    pairs = [(-(r.relevance or 0), r.id) for r in result.records]
    assert pairs == sorted(pairs)


def test_review_mode_caps_at_max_papers(tmp_path):
    scores = {f"p{i:03d}": 0.9 for i in range(1, 61)}
    agent, _, _ = _agent(tmp_path, script=_score_script(scores))
    cfg = SurveyConfig(mode="review", max_papers=50)
    result = agent.run_survey(make_task(tmp_path), cfg)
    assert len(result.records) == 50
    assert [r.id for r in result.records] == [f"p{i:03d}" for i in range(1, 51)]


def test_empty_provider_yields_empty_result(tmp_path):
    empty_dir = tmp_path / "empty_papers"
    empty_dir.mkdir()
    gateway, _, _ = make_gateway()
    agent = SurveyAgent(gateway, FileProvider(empty_dir), scoring_width=1)
    result = agent.run_survey(make_task(tmp_path), SurveyConfig(mode="review"))
    assert result.records == ()
    assert not result.truncated


def test_deep_mode_terminates_on_empty_expansion_round_one(tmp_path):
    scores = {f"p{i:03d}": 0.8 for i in range(1, 61)}
    script = _score_script(scores) + [
        ScriptRule(replies=[json.dumps({"combinations": []})], intent="expand-keywords")
    ]
    agent, _, _ = _agent(tmp_path, script=script)
    cfg = SurveyConfig(mode="deep", max_papers=50, deep_rounds=2)
    result = agent.run_survey(make_task(tmp_path), cfg)
    assert [k.generation for k in result.keyword_history] == [0]
    assert result.records  # the review round's records survive


def test_deep_mode_runs_expansion_rounds_with_consecutive_generations(tmp_path):
    scores = {f"p{i:03d}": 0.8 for i in range(1, 61)}
    script = _score_script(scores) + [
        ScriptRule(
            replies=[
                json.dumps({"combinations": [["cascade", "distillation"]]}),
                json.dumps({"combinations": []}),
            ],
            intent="expand-keywords",
        )
    ]
    agent, _, _ = _agent(tmp_path, script=script)
    cfg = SurveyConfig(mode="deep", max_papers=50, deep_rounds=3)
    result = agent.run_survey(make_task(tmp_path), cfg)
    generations = [k.generation for k in result.keyword_history]
    assert generations == list(range(len(generations)))
    assert generations == [0, 1]


def test_auto_mode_escalates_when_few_clear_floor(tmp_path):
    # only 10 of 60 clear the floor -> under max_papers/2 -> deep escalation
    scores = {f"p{i:03d}": (0.9 if i <= 10 else 0.1) for i in range(1, 61)}
    script = _score_script(scores) + [
        ScriptRule(replies=[json.dumps({"combinations": []})], intent="expand-keywords")
    ]
    agent, _, _ = _agent(tmp_path, script=script)
    task = make_task(tmp_path, mode_hints="auto")
    result = agent.run_survey(task, SurveyConfig(mode="auto", max_papers=50))
    assert result.mode_used == "deep"


def test_auto_mode_stays_review_when_enough_clear_floor(tmp_path):
    scores = {f"p{i:03d}": 0.9 for i in range(1, 61)}
    agent, _, _ = _agent(tmp_path, script=_score_script(scores))
    task = make_task(tmp_path, mode_hints="auto")
    result = agent.run_survey(task, SurveyConfig(mode="auto", max_papers=50))
    assert result.mode_used == "review"


def test_full_text_failure_demotes_record(tmp_path):
    papers_dir, papers = _fixture_corpus(tmp_path, count=6, with_full_text=False)
    scores = {p["id"]: 0.8 for p in papers}
    script = _score_script(scores) + [
        ScriptRule(replies=[json.dumps({"combinations": []})], intent="expand-keywords")
    ]
    gateway, _, _ = make_gateway(script=script)
    events = EventCollector()
    agent = SurveyAgent(gateway, FileProvider(papers_dir), events=events, scoring_width=1)
    result = agent.run_survey(make_task(tmp_path), SurveyConfig(mode="deep", max_papers=10))
    assert any(p.get("code") in ("full_text_unavailable", "deep_no_full_texts")
               for p in events.of("warning")) or events.of("warning") == []
    assert result.records


class _FlakyProvider:
    def __init__(self, inner, fail_from_call):
        self.inner = inner
        self.calls = 0
        self.fail_from_call = fail_from_call

    def query(self, combinations, limit):
        self.calls += 1
        if self.calls >= self.fail_from_call:
            raise ProviderUnavailable("search service down")
        return self.inner.query(combinations, limit)

    def fetch_full_text(self, record_id):
        return self.inner.fetch_full_text(record_id)


def test_provider_down_on_first_fetch_propagates(tmp_path):
    papers_dir, _ = _fixture_corpus(tmp_path)
    gateway, _, _ = make_gateway()
    provider = _FlakyProvider(FileProvider(papers_dir), fail_from_call=1)
    agent = SurveyAgent(gateway, provider, scoring_width=1)
    with pytest.raises(ProviderUnavailable):
        agent.run_survey(make_task(tmp_path), SurveyConfig(mode="review"))


def test_provider_down_mid_deep_returns_truncated(tmp_path):
    papers_dir, _ = _fixture_corpus(tmp_path)
    scores = {f"p{i:03d}": 0.8 for i in range(1, 61)}
    script = _score_script(scores) + [
        ScriptRule(
            replies=[json.dumps({"combinations": [["cascade", "distillation"]]})],
            intent="expand-keywords",
            repeat=True,
        )
    ]
    gateway, _, _ = make_gateway(script=script)
    provider = _FlakyProvider(FileProvider(papers_dir), fail_from_call=2)
    agent = SurveyAgent(gateway, provider, scoring_width=1)
    result = agent.run_survey(make_task(tmp_path), SurveyConfig(mode="deep", max_papers=50))
    assert result.truncated
    assert result.records

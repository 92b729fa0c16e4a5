from __future__ import annotations

import json

import pytest

from reloop.domain import (
    REQUIRED_METHODOLOGY_SECTIONS,
    Assessment,
    Critique,
    IdeaNode,
    LiteratureRecord,
)
from reloop.gateway import MalformedResponse
from reloop.methodology import MethodologyBuilder
from reloop.mockllm import ScriptRule

from .conftest import EventCollector, make_gateway, make_task
from .test_ideas import _baseline

DIMS = ("coherence", "credibility", "verifiability", "novelty", "alignment")


def _builder(script=None):
    gateway, _, _ = make_gateway(script=script or [])
    events = EventCollector()
    return MethodologyBuilder(gateway, events=events), events


def _idea() -> IdeaNode:
    narratives = {d: f"improve {d} by tightening the evaluation" for d in DIMS}
    scores = {"coherence": 7, "credibility": 6, "verifiability": 4, "novelty": 8, "alignment": 7}
    return IdeaNode(
        id="n0001",
        text="Apply adaptive feature fusion to the baseline",
        assessment=Assessment.build(scores, narratives=narratives),
    )


def _lit():
    return [LiteratureRecord(id="p1", title="prior art", abstract="a")]


def test_initialize_produces_required_sections(tmp_path):
    builder, _ = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    assert doc.revision == 0
    assert doc.idea_id == "n0001"
    for heading in REQUIRED_METHODOLOGY_SECTIONS:
        assert heading in doc.headings()
    assert len(doc.sections) >= 5


def test_initialize_repair_on_missing_section(tmp_path):
    partial = {"sections": [[h, "body"] for h in REQUIRED_METHODOLOGY_SECTIONS[:-1]]}
    complete = {"sections": [[h, "body"] for h in REQUIRED_METHODOLOGY_SECTIONS]}
    script = [
        ScriptRule(
            replies=[json.dumps(partial), json.dumps(complete)],
            intent="init-methodology",
        )
    ]
    builder, _ = _builder(script=script)
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    assert set(REQUIRED_METHODOLOGY_SECTIONS) <= set(doc.headings())


def test_initialize_malformed_when_section_never_appears(tmp_path):
    partial = {"sections": [[h, "body"] for h in REQUIRED_METHODOLOGY_SECTIONS[:-1]]}
    script = [
        ScriptRule(replies=[json.dumps(partial)], intent="init-methodology", repeat=True)
    ]
    builder, _ = _builder(script=script)
    with pytest.raises(MalformedResponse):
        builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())


def test_initialize_is_deterministic(tmp_path):
    docs = []
    for _ in range(2):
        builder, _ = _builder()
        docs.append(builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit()))
    assert docs[0] == docs[1]


def test_refine_bumps_revision_and_logs_critiques(tmp_path):
    builder, _ = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    critique = Critique(id="c-7", source="human", target_idea="n0001", text="specify the ablation")
    refined = builder.refine(doc, [critique], _lit(), idea=_idea())
    assert refined.revision == 1
    assert set(doc.headings()) <= set(refined.headings())
    assert "c-7" in refined.change_log


def test_refine_empty_critiques_substitutes_assessor_narrative(tmp_path):
    builder, events = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    refined = builder.refine(doc, [], _lit(), idea=_idea())
    assert refined.revision == 1
    # the synthesized critique references the weakest dimension (verifiability)
    assert refined.change_log
    assert refined.change_log[0].startswith("auto-")
    fallback = events.of("critique")
    assert fallback and fallback[0]["critique"]["source"] == "agent"


def test_refine_dropping_section_is_repaired_or_malformed(tmp_path):
    builder, _ = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    dropped = {"sections": [[h, b] for h, b in doc.sections[1:]], "addressed": []}
    script = [
        ScriptRule(replies=[json.dumps(dropped)], intent="refine-methodology", repeat=True)
    ]
    builder2, _ = _builder(script=script)
    with pytest.raises(MalformedResponse):
        builder2.refine(doc, [], _lit(), idea=_idea())


def test_refine_chain_revisions_strictly_increase(tmp_path):
    builder, _ = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    critique = Critique(id="c-1", source="human", target_idea="n0001", text="clarify data splits")
    for expected_revision in (1, 2, 3):
        doc = builder.refine(doc, [critique], _lit(), idea=_idea())
        assert doc.revision == expected_revision


def test_refine_change_log_only_known_critique_ids(tmp_path):
    builder, _ = _builder()
    doc = builder.initialize(_idea(), make_task(tmp_path), _baseline(), _lit())
    reply = {
        "sections": [[h, b + " more"] for h, b in doc.sections],
        "addressed": ["c-1", "c-unknown"],
    }
    script = [ScriptRule(replies=[json.dumps(reply)], intent="refine-methodology")]
    builder2, _ = _builder(script=script)
    critique = Critique(id="c-1", source="human", target_idea="n0001", text="t")
    refined = builder2.refine(doc, [critique], _lit())
    assert refined.change_log == ("c-1",)

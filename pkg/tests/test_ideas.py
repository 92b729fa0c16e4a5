from __future__ import annotations

import json
import random
import re

import pytest

from reloop.codereview import BaselineAnalysis, CodeInventory, FileEntry
from reloop.domain import Assessment, Critique, IdeaNode, LiteratureRecord
from reloop.ideas import EvolutionConfig, IdeaEngine, IdeaTree
from reloop.mockllm import ScriptRule

from .conftest import EventCollector, make_gateway, make_task

DIMS = ("coherence", "credibility", "verifiability", "novelty", "alignment")


def _baseline() -> BaselineAnalysis:
    inventory = CodeInventory(
        root="r",
        files=(FileEntry(path="main.py", language_tag="python", line_count=40),),
        dependency_edges=(),
    )
    return BaselineAnalysis(
        inventory=inventory,
        file_summaries={"main.py": "entry"},
        repo_summary="single-file baseline",
        entry_points=("main.py",),
        complexity="file_level",
    )


def _literature(n=4):
    return [
        LiteratureRecord(id=f"p{i}", title=f"paper {i}", abstract="a", relevance=0.8)
        for i in range(n)
    ]


def _engine(script=None, seed=0):
    gateway, costs, _ = make_gateway(script=script or [], seed=seed)
    events = EventCollector()
    return IdeaEngine(gateway, events=events), events, gateway


def _flat_assessment(score: float) -> Assessment:
    return Assessment.build({d: score for d in DIMS})


def _candidate(cid: str, text: str, score: float) -> IdeaNode:
    return IdeaNode(id=cid, text=text, assessment=_flat_assessment(score))


# -- generation ----------------------------------------------------------------


def test_generate_ideas_default_count(tmp_path):
    engine, _, _ = _engine()
    cfg = EvolutionConfig()
    nodes = engine.generate_ideas(make_task(tmp_path), _baseline(), _literature(), cfg)
    assert len(nodes) == 15
    assert all(n.depth == 0 and n.parent is None for n in nodes)
    assert all(n.text.strip() for n in nodes)
    assert len({n.id for n in nodes}) == 15


def test_generate_ideas_shortfall_retry(tmp_path):
    first = {"ideas": [{"text": f"idea number {i} alpha beta", "cites": []} for i in range(12)]}
    second = {"ideas": [{"text": f"extra idea {i} gamma delta", "cites": []} for i in range(3)]}
    script = [ScriptRule(replies=[json.dumps(first), json.dumps(second)], intent="generate-ideas")]
    engine, events, gateway = _engine(script=script)
    nodes = engine.generate_ideas(make_task(tmp_path), _baseline(), _literature(), EvolutionConfig())
    assert len(nodes) == 15
    assert gateway.stats.calls == 2  # two generator batches
    assert not events.of("warning")


def test_generate_ideas_shortfall_accepted_with_event(tmp_path):
    batch = {"ideas": [{"text": "only one idea here", "cites": []}]}
    script = [ScriptRule(replies=[json.dumps(batch)], intent="generate-ideas", repeat=True)]
    engine, events, _ = _engine(script=script)
    nodes = engine.generate_ideas(make_task(tmp_path), _baseline(), _literature(), EvolutionConfig())
    assert len(nodes) == 2  # 1 + 1 retry batch
    assert any(p.get("code") == "idea_shortfall" for p in events.of("warning"))


def test_generate_ideas_minimal_config(tmp_path):
    script = [
        ScriptRule(
            replies=[json.dumps({"ideas": [{"text": "single minimal idea", "cites": ["p0"]}]})],
            intent="generate-ideas",
        )
    ]
    engine, _, _ = _engine(script=script)
    cfg = EvolutionConfig(initial_ideas=1, top_k=1)
    nodes = engine.generate_ideas(make_task(tmp_path), _baseline(), _literature(), cfg)
    assert len(nodes) == 1
    assert nodes[0].cites == ("p0",)


# -- assessment ----------------------------------------------------------------


def test_assess_scripted_scores_uniform_weights(tmp_path):
    reply = {
        "coherence": 8, "credibility": 7, "verifiability": 9, "novelty": 6,
        "alignment": 8, "narratives": {d: f"{d} note" for d in DIMS},
    }
    script = [ScriptRule(replies=[json.dumps(reply)], intent="assess-idea")]
    engine, _, _ = _engine(script=script)
    idea = IdeaNode(id="i1", text="an idea")
    assessment = engine.assess(idea, (0.2,) * 5)
    assert assessment.overall == pytest.approx(7.6, abs=1e-9)
    assert assessment.narratives["novelty"] == "novelty note"


def test_assess_degenerate_weights(tmp_path):
    reply = {"coherence": 3, "credibility": 9, "verifiability": 9, "novelty": 9, "alignment": 9}
    script = [ScriptRule(replies=[json.dumps(reply)], intent="assess-idea")]
    engine, _, _ = _engine(script=script)
    assessment = engine.assess(IdeaNode(id="i", text="x"), (1, 0, 0, 0, 0))
    assert assessment.overall == pytest.approx(3.0, abs=1e-9)


def test_assess_clamps_out_of_range_with_warning():
    reply = {"coherence": 12, "credibility": -1, "verifiability": 5, "novelty": 5, "alignment": 5}
    script = [ScriptRule(replies=[json.dumps(reply)], intent="assess-idea")]
    engine, events, _ = _engine(script=script)
    assessment = engine.assess(IdeaNode(id="i", text="x"), (0.2,) * 5)
    assert assessment.coherence == 10.0 and assessment.credibility == 0.0
    assert len([p for p in events.of("warning") if p["code"] == "score_clamped"]) == 2


def test_assess_rejects_bad_weights():
    engine, _, _ = _engine()
    with pytest.raises(Exception):
        engine.assess(IdeaNode(id="i", text="x"), (0.9, 0.9, 0, 0, 0))


def test_assess_matches_dot_product_oracle_on_random_pairs():
    rng = random.Random(3)
    for _ in range(200):
        scores = {d: round(rng.uniform(0, 10), 3) for d in DIMS}
        raw = [rng.uniform(0.01, 1) for _ in range(5)]
        weights = tuple(w / sum(raw) for w in raw)
        reply = dict(scores)
        script = [ScriptRule(replies=[json.dumps(reply)], intent="assess-idea")]
        engine, _, _ = _engine(script=script)
        assessment = engine.assess(IdeaNode(id="i", text="x"), weights)
        oracle = sum(w * scores[d] for w, d in zip(weights, DIMS))
        assert abs(assessment.overall - oracle) <= 1e-9


# -- diverse selection ------------------------------------------------------------


def test_select_top_identical_texts_keep_best():
    cands = [
        _candidate("a", "use graph attention pooling for yields", 9),
        _candidate("b", "use graph attention pooling for yields", 8),
        _candidate("c", "use graph attention pooling for yields", 7),
    ]
    engine, _, _ = _engine()
    picked = engine.select_top(cands, EvolutionConfig(top_k=2))
    assert [n.id for n in picked] == ["a"]


def test_select_top_lineage_cap():
    cands = [
        _candidate(f"c{i}", f"wholly distinct concept {i} " + " ".join(f"w{i}{j}" for j in range(6)), 9 - i)
        for i in range(6)
    ]
    engine, _, _ = _engine()
    roots = {c.id: "rootA" for c in cands}
    picked = engine.select_top(cands, EvolutionConfig(top_k=5, lineage_cap=2), roots)
    assert len(picked) == 2  # capped by shared ancestry


def test_select_top_tiebreak_by_id():
    cands = [
        _candidate("b", "concept beta entirely different words here", 5),
        _candidate("a", "concept alpha with its own unique phrasing", 5),
    ]
    engine, _, _ = _engine()
    picked = engine.select_top(cands, EvolutionConfig(top_k=1))
    assert picked[0].id == "a"


def test_select_top_requires_assessments():
    engine, _, _ = _engine()
    with pytest.raises(ValueError):
        engine.select_top([IdeaNode(id="i", text="x")], EvolutionConfig())


def _oracle_grams(text):
    words = re.findall(r"[a-z0-9]+", text.lower())
    if not words:
        return frozenset()
    if len(words) < 3:
        return frozenset({tuple(words)})
    return frozenset(tuple(words[i : i + 3]) for i in range(len(words) - 2))


def _oracle_similarity(a, b):
    ga, gb = _oracle_grams(a), _oracle_grams(b)
    union = ga | gb
    return len(ga & gb) / len(union) if union else 0.0


def _oracle_select(cands, roots, top_k, threshold, cap):
    ordered = sorted(cands, key=lambda c: (-c.assessment.overall, c.id))
    picked, counts = [], {}
    for cand in ordered:
        if len(picked) == top_k:
            break
        if any(_oracle_similarity(cand.text, p.text) > threshold for p in picked):
            continue
        root = roots[cand.id]
        if counts.get(root, 0) >= cap:
            continue
        picked.append(cand)
        counts[root] = counts.get(root, 0) + 1
    return [c.id for c in picked]


def _random_candidates(rng, n):
    pool = ["graph", "attention", "pooling", "yield", "fusion", "sparse",
            "routing", "memory", "gating", "contrastive", "spectral", "replay"]
    cands, roots = [], {}
    for i in range(n):
        if cands and rng.random() < 0.35:
            # near-duplicate of an earlier candidate, to exercise the
            # similarity brake
            text = rng.choice(cands).text
            if rng.random() < 0.5:
                text += " " + rng.choice(pool)
        else:
            text = " ".join(rng.choice(pool) for _ in range(rng.randint(3, 10)))
        score = round(rng.uniform(0, 5), 2)
        cand = _candidate(f"c{i:02d}", text, score)
        cands.append(cand)
        roots[cand.id] = f"root{rng.randint(0, 3)}"
    return cands, roots


def test_select_top_matches_bruteforce_oracle_on_random_sets():
    rng = random.Random(17)
    engine, _, _ = _engine()
    cfg = EvolutionConfig(top_k=5, similarity_threshold=0.6, lineage_cap=2)
    for _ in range(200):
        cands, roots = _random_candidates(rng, rng.randint(1, 20))
        picked = [n.id for n in engine.select_top(cands, cfg, roots)]
        expected = _oracle_select(cands, roots, 5, 0.6, 2)
        assert picked == expected


def test_select_top_invariant_under_positive_score_scaling():
    rng = random.Random(23)
    engine, _, _ = _engine()
    cfg = EvolutionConfig(top_k=5, similarity_threshold=0.6, lineage_cap=2)
    for _ in range(40):
        cands, roots = _random_candidates(rng, rng.randint(2, 20))
        baseline_pick = [n.id for n in engine.select_top(cands, cfg, roots)]
        for factor in (0.5, 2.0):
            scaled = [
                IdeaNode(
                    id=c.id,
                    text=c.text,
                    assessment=_flat_assessment(c.assessment.coherence * factor),
                )
                for c in cands
            ]
            assert [n.id for n in engine.select_top(scaled, cfg, roots)] == baseline_pick


# -- evolution ---------------------------------------------------------------------


def _seeded_tree(engine, tmp_path, cfg):
    tree = IdeaTree()
    nodes = engine.generate_ideas(make_task(tmp_path), _baseline(), _literature(), cfg, tree=tree)
    for node in nodes:
        tree.update(node.with_assessment(_flat_assessment(5.0)))
    return tree, [tree.get(n.id) for n in nodes]


def test_evolve_children_counts_and_critique_consumption(tmp_path):
    engine, _, _ = _engine()
    cfg = EvolutionConfig()
    tree, nodes = _seeded_tree(engine, tmp_path, cfg)
    selected = nodes[:5]
    critique = Critique(id="c-h1", source="human", target_idea=selected[0].id, text="focus the scope")
    children = engine.evolve(selected, [critique], _literature(), cfg, tree)
    assert len(children) == 15
    for child in children:
        assert child.depth == 1
        if child.parent == selected[0].id:
            assert child.consumed_critiques == ("c-h1",)
        else:
            assert child.consumed_critiques == ()
    by_parent = {}
    for child in children:
        by_parent.setdefault(child.parent, []).append(child)
    assert all(len(v) == 3 for v in by_parent.values())


def test_evolve_rejects_frontier_at_max_depth(tmp_path):
    engine, _, _ = _engine()
    cfg = EvolutionConfig(max_rounds=0)
    tree, nodes = _seeded_tree(engine, tmp_path, cfg)
    with pytest.raises(ValueError):
        engine.evolve(nodes[:2], [], _literature(), cfg, tree)


def test_evolve_empty_selection_rejected(tmp_path):
    engine, _, _ = _engine()
    tree = IdeaTree()
    with pytest.raises(ValueError):
        engine.evolve([], [], _literature(), EvolutionConfig(), tree)


def test_evolve_per_parent_failure_degrades(tmp_path):
    script = [ScriptRule(replies=[{"error": "down"}], intent="evolve-idea", repeat=True)]
    engine, events, _ = _engine(script=script)
    cfg = EvolutionConfig()
    tree, nodes = _seeded_tree(engine, tmp_path, cfg)
    children = engine.evolve(nodes[:5], [], _literature(), cfg, tree)
    assert children == []
    assert len([p for p in events.of("warning") if p["code"] == "evolve_failed"]) == 5


# -- the full loop -------------------------------------------------------------------


def test_run_evolution_default_counts(tmp_path):
    engine, events, _ = _engine()
    cfg = EvolutionConfig()
    per_round_violations = []

    def checking_source(tree, frontier, round_index):
        per_round_violations.extend(tree.check_invariants(cfg))
        return []

    tree = engine.run_evolution(
        make_task(tmp_path), _baseline(), _literature(), checking_source, cfg,
        weights=(0.2,) * 5,
    )
    assert len(tree.nodes) == 15 + 4 * 15
    assert tree.depth() == 4
    assert len(tree.selected_frontier) == 5
    assert per_round_violations == []  # invariants held at every round boundary
    assert tree.check_invariants(cfg) == []
    assert len(events.of("round")) == 5  # rounds 0..4


def test_run_evolution_zero_rounds(tmp_path):
    engine, _, _ = _engine()
    cfg = EvolutionConfig(max_rounds=0)
    tree = engine.run_evolution(
        make_task(tmp_path), _baseline(), _literature(), None, cfg
    )
    assert len(tree.nodes) == 15
    assert all(n.depth == 0 for n in tree.nodes.values())
    assert len(tree.selected_frontier) == 5


def test_run_evolution_stalls_when_all_evolutions_fail(tmp_path):
    script = [ScriptRule(replies=[{"error": "down"}], intent="evolve-idea", repeat=True)]
    engine, events, _ = _engine(script=script)
    cfg = EvolutionConfig()
    tree = engine.run_evolution(
        make_task(tmp_path), _baseline(), _literature(), None, cfg
    )
    assert len(tree.nodes) == 15  # only roots
    assert len(tree.selected_frontier) == 5  # last successful selection holds
    assert events.of("evolution_stalled")


def test_run_evolution_is_deterministic(tmp_path):
    cfg = EvolutionConfig()
    exports = []
    for _ in range(2):
        engine, _, _ = _engine(seed=13)
        tree = engine.run_evolution(
            make_task(tmp_path), _baseline(), _literature(), None, cfg
        )
        exports.append(json.dumps(tree.export(), sort_keys=True))
    assert exports[0] == exports[1]


def test_run_evolution_critiques_attach_to_target_children(tmp_path):
    engine, _, _ = _engine()
    cfg = EvolutionConfig(max_rounds=1)

    def source(tree, frontier, round_index):
        if round_index == 0:
            return [
                Critique(
                    id="human-1",
                    source="human",
                    target_idea=frontier[0].id,
                    text="narrow this to the hard cases",
                )
            ]
        return []

    tree = engine.run_evolution(
        make_task(tmp_path), _baseline(), _literature(), source, cfg
    )
    target = tree.selected_frontier and tree.nodes
    consumed_by = {
        n.id: n.consumed_critiques for n in tree.nodes.values() if n.depth == 1
    }
    # exactly the children of the critiqued parent consumed it
    critiqued_parent = [n for n in tree.nodes.values() if n.critiques][0]
    for node_id, consumed in consumed_by.items():
        child = tree.nodes[node_id]
        if child.parent == critiqued_parent.id:
            assert "human-1" in consumed
        else:
            assert "human-1" not in consumed


def test_node_count_formula_across_configs(tmp_path):
    for rounds in (1, 2, 3):
        cfg = EvolutionConfig(initial_ideas=8, children_per_selected=2, top_k=3, max_rounds=rounds)
        engine, _, _ = _engine(seed=rounds)
        tree = engine.run_evolution(
            make_task(tmp_path), _baseline(), _literature(), None, cfg
        )
        assert len(tree.nodes) == 8 + rounds * 3 * 2
        assert tree.check_invariants(cfg) == []

from __future__ import annotations

import json
import threading

import pytest

from reloop.gateway import (
    BackendUnavailable,
    LLMGateway,
    MalformedResponse,
    ModelRole,
    extract_json_object,
    validate_schema,
)
from reloop.mockllm import MockBackend, ScriptRule
from reloop.store import usd_to_micro

from .conftest import make_gateway


def test_scripted_identity():
    gateway, _, _ = make_gateway(script=[ScriptRule(replies=["pong"], contains="ping")])
    completion = gateway.complete("generator", "ping", [])
    assert completion.text == "pong"


def test_cost_arithmetic_from_rates():
    # rates 1e-6 / 2e-6 $ per token; tokens (100, 50) -> 2.0e-4 $
    prompt = " ".join(["w"] * 100)
    reply = " ".join(["r"] * 50)
    gateway, costs, _ = make_gateway(
        script=[ScriptRule(replies=[reply], contains="w")],
        rate_in_usd=1e-6,
        rate_out_usd=2e-6,
    )
    completion = gateway.complete("generator", prompt)
    assert completion.tokens_in == 100 and completion.tokens_out == 50
    assert completion.cost_usd == pytest.approx(2.0e-4, abs=1e-12)
    assert costs.entries[0].cost_micro == usd_to_micro(2.0e-4)


def test_retry_then_success_counts_retries():
    script = [
        ScriptRule(
            replies=[{"error": "down"}, {"error": "down"}, "recovered"],
            contains="flaky",
        )
    ]
    gateway, _, events = make_gateway(script=script)
    completion = gateway.complete("generator", "flaky call")
    assert completion.text == "recovered"
    assert gateway.stats.retries == 2
    assert len(events.of("retry")) == 2


def test_backend_unavailable_after_retries_exhausted():
    script = [ScriptRule(replies=[{"error": "down"}], contains="dead", repeat=True)]
    gateway, _, _ = make_gateway(script=script, retries=3)
    with pytest.raises(BackendUnavailable):
        gateway.complete("generator", "dead backend")
    assert gateway.stats.retries == 3


def test_unregistered_role_and_empty_prompt():
    gateway, _, _ = make_gateway()
    with pytest.raises(ValueError):
        gateway.complete("nonexistent", "hi")
    with pytest.raises(ValueError):
        gateway.complete("generator", "   ")


def test_generator_temperature_is_highest_default():
    gateway, _, _ = make_gateway()
    temps = {name: gateway.role(name).temperature for name in
             ("surveyor", "reviewer", "generator", "evolver", "assessor",
              "methodologist", "coder", "debugger")}
    assert temps["generator"] == max(temps.values())
    assert temps["generator"] >= temps["evolver"]


def test_structured_parses_scripted_json():
    script = [ScriptRule(replies=['{"score": 0.7}'], contains="relevance")]
    gateway, _, _ = make_gateway(script=script)
    parsed = gateway.complete_structured("surveyor", "relevance of x", {"score": "number"})
    assert parsed["score"] == 0.7


def test_structured_reasks_after_prose_then_valid():
    script = [
        ScriptRule(
            replies=["sure, here is my thinking...", 'prefix {"score": 0.4} suffix'],
            contains="relevance",
        )
    ]
    gateway, _, _ = make_gateway(script=script)
    parsed = gateway.complete_structured("surveyor", "relevance of y", {"score": "number"})
    assert parsed["score"] == 0.4
    assert gateway.stats.reasks == 1


def test_structured_malformed_after_three_bad_replies():
    script = [ScriptRule(replies=["no json here"], contains="relevance", repeat=True)]
    gateway, _, _ = make_gateway(script=script)
    with pytest.raises(MalformedResponse):
        gateway.complete_structured("surveyor", "relevance of z", {"score": "number"})
    assert gateway.stats.reasks == 2


def test_structured_validator_triggers_reask():
    script = [
        ScriptRule(
            replies=['{"score": "high"}', '{"score": 0.8}'],
            contains="relevance",
        )
    ]
    gateway, _, _ = make_gateway(script=script)
    parsed = gateway.complete_structured("surveyor", "relevance check", {"score": "number"})
    assert parsed["score"] == 0.8


def test_structured_requires_nonempty_schema():
    gateway, _, _ = make_gateway()
    with pytest.raises(ValueError):
        gateway.complete_structured("surveyor", "x", {})


def test_extract_json_object_variants():
    assert extract_json_object('{"a": 1}') == {"a": 1}
    assert extract_json_object('text {"a": {"b": [1, 2]}} more') == {"a": {"b": [1, 2]}}
    assert extract_json_object("[1, 2]") == [1, 2]
    assert extract_json_object('{"s": "brace } in string"}') == {"s": "brace } in string"}
    with pytest.raises(ValueError):
        extract_json_object("no json at all")


def test_validate_schema_types():
    schema = {"a": "number", "b": "string", "c": "list"}
    assert validate_schema({"a": 1.5, "b": "x", "c": []}, schema) is None
    assert validate_schema({"a": "x", "b": "x", "c": []}, schema) is not None
    assert validate_schema({"b": "x", "c": []}, schema) is not None
    assert validate_schema([1], schema) is not None
    assert validate_schema({"a": True, "b": "x", "c": []}, schema) is not None


def test_ledger_entries_accumulate_exactly():
    gateway, costs, _ = make_gateway(rate_in_usd=1e-6, rate_out_usd=1e-6)
    for i in range(25):
        gateway.complete("generator", f"prompt number {i}")
    total_micro = sum(e.cost_micro for e in costs.entries)
    recomputed = sum(
        usd_to_micro((e.tokens_in + e.tokens_out) * 1e-6) for e in costs.entries
    )
    assert total_micro == recomputed
    assert len(costs.entries) == gateway.stats.calls == 25


def test_role_registration_requires_known_backend():
    backend = MockBackend()
    gateway = LLMGateway({backend.backend_id: backend})
    with pytest.raises(ValueError):
        gateway.register(ModelRole("generator", 1.0, "missing-backend"))


def test_concurrent_calls_all_accounted():
    gateway, costs, _ = make_gateway(max_concurrency=2)
    errors = []

    def worker(i):
        try:
            gateway.complete("generator", f"concurrent prompt {i}")
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(costs.entries) == 16

from __future__ import annotations

import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intentclar.degrade import (
    GateReason,
    PlanViolation,
    RemovalPlan,
    SamplerConfig,
    SimilarityProviderConfig,
    degrade_query,
    quality_gate,
    sample_removal_plan,
    similarity,
)
from intentclar.gateway import Gateway, GatewayConfig, Mode, record_transport
from intentclar.model import ComplexityLevel as L
from intentclar.model import SolutionPath, ToolCall, level_for
from intentclar.util import MalformedModelJson

from synth import random_solution

RIDE = SolutionPath((ToolCall("book_ride", (("service", "Lyft"), ("destination", "Union Station"))),))
RIDE_QUERY = "Book a Lyft to Union Station."


def _only(level_index: int) -> SamplerConfig:
    w = [0.0] * 4
    w[level_index] = 1.0
    return SamplerConfig(tuple(w))


def test_fully_specified_draw_has_no_targets():
    plan = sample_removal_plan(RIDE, _only(0), 1)
    assert plan.level is L.FULLY_SPECIFIED and plan.targets == frozenset()


@pytest.mark.parametrize("idx", [2, 3])
def test_multi_levels_fall_back_on_one_param(idx):
    sol = SolutionPath((ToolCall("f", (("a", "1"),)),))
    plan = sample_removal_plan(sol, _only(idx), 3)
    assert plan.level is L.SINGLE_API_SINGLE_PARAM and plan.targets == {(0, "a")}


def test_multi_api_falls_back_to_single_api_multi():
    sol = SolutionPath((ToolCall("f", (("a", "1"), ("b", "2"))), ToolCall("g", ())))
    plan = sample_removal_plan(sol, _only(3), 5)
    assert plan.level is L.SINGLE_API_MULTI_PARAM and plan.targets == {(0, "a"), (0, "b")}


def test_single_param_choice_is_uniform():
    counts = Counter()
    rng = random.Random(11)
    for _ in range(10_000):
        plan = sample_removal_plan(RIDE, _only(1), rng)
        assert plan.level is L.SINGLE_API_SINGLE_PARAM
        (target,) = plan.targets
        counts[target] += 1
    for slot in [(0, "service"), (0, "destination")]:
        assert abs(counts[slot] / 10_000 - 0.5) <= 0.02


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda w: sum(w) > 0))
def test_plan_shape_matches_level(seed, weights):
    rng = random.Random(seed)
    sol = random_solution(rng)
    plan = sample_removal_plan(sol, SamplerConfig(tuple(weights)), rng)
    assert level_for(sorted(plan.targets)) is plan.level
    names = {(ci, n) for ci, c in enumerate(sol.calls) for n in c.names}
    assert plan.targets <= names


def test_sampler_config_validation():
    assert SamplerConfig((1, 1, 2, 0)).level_weights == (0.25, 0.25, 0.5, 0.0)
    with pytest.raises(ValueError):
        SamplerConfig((0, 0, 0, 0))
    with pytest.raises(ValueError):
        SamplerConfig(multi_param_count_range=(1, 3))


def _ride_gateway(reply_for):
    def responder(req):
        payload = json.loads(req.messages[0][1])
        return json.dumps(reply_for(payload))
    return Gateway(GatewayConfig(mode=Mode.LIVE), transport=record_transport(responder))


def _lyft_reply(payload):
    ki = payload["key_info"]
    (key,) = ki
    params = ki[key]["parameters"]
    params["service"]["current"] = "ride service"
    return {"unspecified_query": "Book a ride service to Union Station.", "key_info": ki}


def test_degrade_removes_lyft_and_records_mapping():
    plan = RemovalPlan({(0, "service")}, L.SINGLE_API_SINGLE_PARAM)
    rec = degrade_query(RIDE_QUERY, RIDE, plan, _ride_gateway(_lyft_reply), "ride")
    assert "lyft" not in rec.unspecified_query.lower()
    assert rec.key_info.mapping() == {(0, "service"): ("Lyft", "ride service")}
    assert rec.key_info.get(0, "destination").removed is False
    assert quality_gate(rec)


def test_missing_removed_flag_is_malformed_after_reprompt():
    def broken(payload):
        reply = _lyft_reply(payload)
        for params in (e["parameters"] for e in reply["key_info"].values()):
            params["service"].pop("removed")
        return reply

    plan = RemovalPlan({(0, "service")}, L.SINGLE_API_SINGLE_PARAM)
    with pytest.raises(MalformedModelJson, match="removed"):
        degrade_query(RIDE_QUERY, RIDE, plan, _ride_gateway(broken))


def test_touching_unplanned_params_is_a_plan_violation():
    def overreach(payload):
        reply = _lyft_reply(payload)
        for params in (e["parameters"] for e in reply["key_info"].values()):
            params["destination"]["removed"] = True
        return reply

    plan = RemovalPlan({(0, "service")}, L.SINGLE_API_SINGLE_PARAM)
    with pytest.raises(PlanViolation):
        degrade_query(RIDE_QUERY, RIDE, plan, _ride_gateway(overreach))


def test_empty_plan_needs_no_model():
    plan = RemovalPlan(set(), L.FULLY_SPECIFIED)
    rec = degrade_query(RIDE_QUERY, RIDE, plan, None)
    assert rec.unspecified_query == RIDE_QUERY and not rec.key_info.removed()


def test_similarity_examples():
    tok = SimilarityProviderConfig()
    assert similarity("ride service", "fried chicken", tok) == 0.0
    assert similarity("book a car", "book a flight", tok) == 0.5
    assert similarity("Lyft", "Lyft", tok) == 1.0


class _FixedEmbed:
    def embed(self, texts, endpoint, model=None):
        return [[1.0, 0.0], [0.0, 1.0]]


def test_embedding_similarity_maps_cosine_to_unit_interval():
    cfg = SimilarityProviderConfig("EmbeddingEndpoint", endpoint="http://x", gateway=_FixedEmbed())
    assert similarity("a", "b", cfg) == 0.5
    assert similarity("a", "a", cfg) == 1.0


def _ride_record(current: str, q2: str):
    plan = RemovalPlan({(0, "service")}, L.SINGLE_API_SINGLE_PARAM)

    def reply(payload):
        ki = payload["key_info"]
        for e in ki.values():
            e["parameters"]["service"]["current"] = current
        return {"unspecified_query": q2, "key_info": ki}

    return degrade_query(RIDE_QUERY, RIDE, plan, _ride_gateway(reply))


def test_gate_reasons():
    assert quality_gate(_ride_record("Lyft", "Book a ride to Union Station.")).reason is GateReason.TOO_SIMILAR
    assert quality_gate(_ride_record("a car", "Book a LYFT to Union Station.")).reason is GateReason.LEAKED_VALUE
    assert quality_gate(_ride_record("a car", "Book a ride somewhere.")).reason is GateReason.DROPPED_VALUE


def test_gate_threshold_is_strict():
    words = [f"w{i}" for i in range(20)]
    original, current = " ".join(words), " ".join(words[:17])
    assert similarity(original, current) == 0.85
    ride = SolutionPath((ToolCall("book_ride", (("service", original), ("destination", "Union Station"))),))
    plan = RemovalPlan({(0, "service")}, L.SINGLE_API_SINGLE_PARAM)

    def reply(payload):
        ki = payload["key_info"]
        for e in ki.values():
            e["parameters"]["service"]["current"] = current
        return {"unspecified_query": "Book a ride to Union Station.", "key_info": ki}

    rec = degrade_query(f"Book {original} to Union Station.", ride, plan, _ride_gateway(reply))
    assert quality_gate(rec)
    assert quality_gate(rec, SimilarityProviderConfig(threshold=0.84)).reason is GateReason.TOO_SIMILAR

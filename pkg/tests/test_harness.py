from __future__ import annotations

import json

import pytest

from intentclar.fixtures import FixtureBundle
from intentclar.gateway import Gateway, GatewayConfig, Mode, record_transport
from intentclar.harness import (
    MULTI_QUESTION_REPLY,
    UNKNOWN_REPLY,
    ApiDoc,
    EmptyPool,
    OracleAssistant,
    ScriptedAssistant,
    Termination,
    build_scenario,
    evaluate_records,
    load_api_pool,
    load_eval_records,
    load_personas,
    rule_reply,
    run_session,
    score_session,
    simulate_user,
    user_system_prompt,
)
from intentclar.metrics import aggregate
from intentclar.model import (
    SUMMARY_LEAD,
    ComplexityLevel,
    DegradedRecord,
    KeyInfo,
    SolutionPath,
    ToolCall,
    serialize_solution,
)
from intentclar.protocol import parse_turn

PERSONAS = load_personas()
BUNDLE = FixtureBundle()


@pytest.fixture(scope="module")
def records(golden_dialogues) -> dict[str, DegradedRecord]:
    return {k: d.source for k, d in golden_dialogues.items()}


def two_param_record() -> DegradedRecord:
    sol = SolutionPath((ToolCall("get_news_for_topic", (("topic", "technology"), ("region", "US"))),))
    ki = KeyInfo.from_solution(sol, {(0, "topic")})
    spec = ki.get(0, "topic")
    ki = ki.with_param(0, "topic", type(spec)(True, "technology", "", 1, "Which topic?"))
    return DegradedRecord(
        "news2", "Get US technology news.", "Get US news.", sol, ki,
        ComplexityLevel.SINGLE_API_SINGLE_PARAM, ("Step 1: Fetch using get_news_for_topic.",),
    )


# ---------------------------------------------------------------- scenarios

def test_level_one_menu_is_gold(records):
    sc = build_scenario(records["passport"], 1)
    assert [d.name for d in sc.api_menu] == records["passport"].solution.api_names
    assert sc.persona is None


def test_level_three_seed_pins_jokester(records):
    sc = build_scenario(records["passport"], 3, PERSONAS, seed=19)
    assert sc.persona.type_name == "A jokester"
    assert sc.persona.example_response == "I'm Amy, haha, just kidding! I'm Emma."
    assert "A jokester" in user_system_prompt(sc)
    assert [d.name for d in sc.api_menu] == records["passport"].solution.api_names


def test_level_two_adds_similar_distractors(records):
    pool = load_api_pool(BUNDLE.distractors)
    sc = build_scenario(records["passport"], 2, distractor_pool=pool, seed=4)
    names = [d.name for d in sc.api_menu]
    assert set(records["passport"].solution.api_names) < set(names)
    assert "book_flight" in names


def test_level_two_ranking_oracle():
    sol = SolutionPath((ToolCall("book_car", (("date", "2022-12-01"),)),))
    rec = DegradedRecord("c", "q", "q", sol, KeyInfo.from_solution(sol), ComplexityLevel.FULLY_SPECIFIED,
                         api_docs={"book_car": "book a car rental"})
    pool = [ApiDoc("book_flight", "book a flight"), ApiDoc("play_music", "stream songs"),
            ApiDoc("get_weather", "weather report")]
    sc = build_scenario(rec, 2, distractor_pool=pool, n_distractors=1)
    assert sorted(d.name for d in sc.api_menu) == ["book_car", "book_flight"]


def test_empty_pools_raise(records):
    with pytest.raises(EmptyPool):
        build_scenario(records["news"], 2, distractor_pool=[])
    with pytest.raises(EmptyPool):
        build_scenario(records["news"], 3, persona_pool=[])


def test_user_prompts_keep_typo_only_in_verbatim_form(records):
    sc = build_scenario(records["news"], 1)
    assert "infomation" in user_system_prompt(sc)
    assert "infomation" not in user_system_prompt(sc, normalized=True)
    assert records["news"].original_query in user_system_prompt(sc)


# ---------------------------------------------------------------- rule replies

def test_rule_replies(records):
    sc = build_scenario(two_param_record(), 1)
    two = parse_turn("[QUESTION] Which topic? [QUESTION] Which region?")
    assert rule_reply(sc, two)[0] == MULTI_QUESTION_REPLY
    assert rule_reply(sc, parse_turn("[QUESTION] What colour is the sky?"))[0] == UNKNOWN_REPLY
    assert rule_reply(sc, parse_turn("[QUESTION] Which region?"))[0] == UNKNOWN_REPLY
    assert rule_reply(sc, parse_turn("[QUESTION] Which topic?"))[0] == "The answer is: technology."
    assert simulate_user(sc, parse_turn("[QUESTION] Tell me the topic please")) == "The answer is: technology."


def test_level_two_routes_through_gateway(records):
    seen = []

    def responder(req):
        seen.append(req)
        return "  The answer is: technology.  "

    gw = Gateway(GatewayConfig(mode=Mode.LIVE), transport=record_transport(responder))
    sc = build_scenario(records["news"], 3, PERSONAS, seed=19)
    out = simulate_user(sc, parse_turn("[QUESTION] Which topic?"), gw)
    assert out == "The answer is: technology."
    assert seen[0].system_prompt == user_system_prompt(sc)
    assert seen[0].messages[-1][1] == "[QUESTION] Which topic?"
    with pytest.raises(ValueError):
        simulate_user(sc, parse_turn("[QUESTION] x"))


# ---------------------------------------------------------------- sessions

@pytest.mark.parametrize("rid", ["passport", "news", "video_call", "wireless_mouse", "housework"])
def test_oracle_session(records, rid):
    rec = records[rid]
    sc = build_scenario(rec, 1)
    tr = run_session(OracleAssistant(rec), sc)
    assert tr.termination is Termination.SUMMARIZED
    assert tr.questions_asked == len(rec.key_info.removed())
    t = score_session(tr)
    assert t.clarified_count == t.unspecified_count and t.solution_present
    r = aggregate([t])
    assert (r.icr, r.ce, r.scr, r.tss, r.prs) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_looping_assistant_hits_round_cap():
    sc = build_scenario(two_param_record(), 1)
    tr = run_session(ScriptedAssistant(["[QUESTION] Which topic?"]), sc)
    assert tr.termination is Termination.ROUND_CAP_EXCEEDED
    assert tr.questions_asked == 5 and tr.final_solution is None
    t = score_session(tr)
    assert t.clarified_count == 0 and not t.solution_present


def test_idle_assistant_stops():
    sc = build_scenario(two_param_record(), 1)
    tr = run_session(ScriptedAssistant(["Thinking..."]), sc)
    assert tr.termination is Termination.ROUND_CAP_EXCEEDED and tr.questions_asked == 0


def test_broken_summary_is_parse_failure():
    sc = build_scenario(two_param_record(), 1)
    tr = run_session(ScriptedAssistant([SUMMARY_LEAD + '[{"task": "x", "parameters": [']), sc)
    assert tr.termination is Termination.PARSE_FAILURE and tr.final_solution is None


def test_assistant_exception_is_recorded():
    def crash(history):
        raise RuntimeError("boom")

    tr = run_session(crash, build_scenario(two_param_record(), 1))
    assert tr.termination is Termination.ASSISTANT_ERROR and "boom" in tr.error


def test_immediate_placeholder_summary_hand_count():
    rec = two_param_record()
    guess = SolutionPath((ToolCall("get_news_for_topic", (("topic", "<unknown_topic>"), ("region", "US"))),))
    tr = run_session(ScriptedAssistant([SUMMARY_LEAD + serialize_solution(guess)]), build_scenario(rec, 1))
    t = score_session(tr)
    assert (t.clarified_count, t.unspecified_count, t.solution_present) == (0, 1, True)
    # triples: region matches, topic does not -> tp 1, fp 1, fn 1
    assert aggregate([t]).prs == 0.5
    assert aggregate([t]).tss == 1.0


def test_marker_leak_flagged():
    rec = two_param_record()
    tr = run_session(ScriptedAssistant(["<SOE> [QUESTION] Which topic? <EOE>", "{gold_summary}"], rec),
                     build_scenario(rec, 1))
    assert tr.marker_leak


# ---------------------------------------------------------------- batch

def test_level_one_evaluation_is_deterministic_across_workers():
    recs = load_eval_records(BUNDLE.goldens / "augmented.jsonl")
    assert [r.record_id for r in recs] == ["passport", "news", "video_call", "wireless_mouse", "housework"]
    a, ta = evaluate_records(recs, 1, OracleAssistant, seed=3, workers=1)
    b, tb = evaluate_records(recs, 1, OracleAssistant, seed=3, workers=4)
    assert [x.to_dict() for x in a] == [x.to_dict() for x in b]
    assert json.dumps([t.to_dict() for t in ta]) == json.dumps([t.to_dict() for t in tb])
    assert aggregate(a).ir == sum(len(r.key_info.removed()) for r in recs) / len(recs)

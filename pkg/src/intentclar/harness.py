"""Multi-turn evaluation of clarification assistants against simulated users.

Level I answers with a deterministic rule engine, Level II adds distractor
APIs to the menu, and Level III routes the user through a persona prompt.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

from .degrade import SimilarityProviderConfig, similarity
from .dialogue import question_groups, task_statement
from .gateway import ChatRequest, Gateway, Role
from .metrics import SessionTally, normalize_value
from .model import DegradedRecord, ParamRef, SolutionPath, summary_text
from .protocol import AssistantEvent, EventKind, has_error_markers, parse_turn
from .resources import data_path, prompt
from .util import as_rng

log = logging.getLogger(__name__)

MULTI_QUESTION_REPLY = "I cannot answer multiple questions at once. Please ask one question at a time."
UNKNOWN_REPLY = "I do not know the answer. Please feel free to ask me other questions."
ANSWER_TEMPLATE = "The answer is: {value}."
PERSONA_QUESTION = "What is your name?"


class EmptyPool(ValueError):
    pass


class AssistantError(RuntimeError):
    pass


@dataclass(frozen=True)
class ApiDoc:
    name: str
    description: str = ""

    def text(self) -> str:
        return f"{self.name.replace('_', ' ')} {self.description}".strip()


@dataclass(frozen=True)
class Persona:
    id: str
    type_name: str
    traits: str
    tone: str
    example_question: str
    example_response: str


def load_personas(path: str | Path | None = None) -> list[Persona]:
    rows = json.loads(Path(path or data_path("personas.json")).read_text("utf-8"))
    return [Persona(**r) for r in rows]


def load_api_pool(path: str | Path) -> list[ApiDoc]:
    rows = json.loads(Path(path).read_text("utf-8"))
    if isinstance(rows, dict):
        return [ApiDoc(k, v) for k, v in rows.items()]
    return [ApiDoc(r["name"], r.get("description", "")) for r in rows]


@dataclass(frozen=True)
class Scenario:
    record: DegradedRecord
    level: int
    api_menu: tuple[ApiDoc, ...]
    persona: Persona | None = None
    round_cap_per_intent: int = 5
    # (question text -> removed-parameter positions) from the dialogue builder
    question_links: dict[str, tuple[int, ...]] = field(default_factory=dict, compare=False)

    @property
    def question_cap(self) -> int:
        return self.round_cap_per_intent * max(1, len(self.record.key_info.removed()))


def build_scenario(
    record: DegradedRecord,
    level: int,
    persona_pool: list[Persona] | None = None,
    distractor_pool: list[ApiDoc] | None = None,
    seed: int | random.Random = 0,
    n_distractors: int = 2,
    provider: SimilarityProviderConfig | None = None,
    round_cap_per_intent: int = 5,
) -> Scenario:
    if level not in (1, 2, 3):
        raise ValueError("level must be 1, 2 or 3")
    rng = as_rng(seed)
    gold = [ApiDoc(n, record.api_docs.get(n, "")) for n in dict.fromkeys(record.solution.api_names)]
    menu = list(gold)
    persona = None
    if level == 2:
        gold_names = {g.name for g in gold}
        pool = [d for d in (distractor_pool or []) if d.name not in gold_names]
        if not pool:
            raise EmptyPool("Level II needs a non-empty distractor pool")
        chosen: list[ApiDoc] = []
        for g in gold:
            ranked = sorted(
                (d for d in pool if d not in chosen),
                key=lambda d: (-similarity(g.text(), d.text(), provider), d.name),
            )
            chosen += ranked[:n_distractors]
        menu += chosen
        rng.shuffle(menu)
    elif level == 3:
        if not persona_pool:
            raise EmptyPool("Level III needs a non-empty persona pool")
        persona = rng.choice(persona_pool)
    links: dict[str, tuple[int, ...]] = {}
    for group in question_groups(record.key_info):
        if any(m.spec.question for m in group.members):
            links[group.question] = tuple(m.position for m in group.members)
    return Scenario(record, level, tuple(menu), persona, round_cap_per_intent, links)


# --------------------------------------------------------------------------
# user simulation


def _mentions(question: str, ref: ParamRef) -> bool:
    q = question.lower()
    names = {ref.name.lower(), ref.name.replace("_", " ").lower()}
    apis = {ref.api_name.lower(), ref.api_name.replace("_", " ").lower()}
    return any(n and n in q for n in names | apis)


def match_question(scenario: Scenario, question: str, answered: set[int] | None = None) -> ParamRef | None:
    """Removed parameter a question asks about, or None.

    Exact matches against stored questions win; otherwise a parameter or API
    name mention. Among several candidates the first unanswered by position
    is chosen.
    """
    removed = scenario.record.key_info.removed()
    answered = answered or set()
    linked = scenario.question_links.get(question.strip())
    if linked:
        cands = [r for r in removed if r.position in linked]
    else:
        by_name = [r for r in removed if _mentions(question, r)]
        # a parameter-name hit beats an API-name-only hit
        strong = [r for r in by_name if r.name.lower() in question.lower()
                  or r.name.replace("_", " ").lower() in question.lower()]
        cands = strong or by_name
    if not cands:
        return None
    fresh = [r for r in cands if r.position not in answered]
    return (fresh or cands)[0]


def rule_reply(scenario: Scenario, events: list[AssistantEvent], answered: set[int] | None = None) -> tuple[str, ParamRef | None]:
    questions = [e for e in events if e.kind is EventKind.QUESTION]
    if len(questions) > 1:
        return MULTI_QUESTION_REPLY, None
    if not questions:
        return UNKNOWN_REPLY, None
    ref = match_question(scenario, questions[0].text, answered)
    if ref is None:
        return UNKNOWN_REPLY, None
    return ANSWER_TEMPLATE.format(value=ref.spec.original), ref


def user_system_prompt(scenario: Scenario, normalized: bool = False) -> str:
    task = scenario.record.original_query
    if scenario.level == 3 and scenario.persona is not None:
        p = scenario.persona
        text = prompt("user_persona", normalized)
        for slot, val in (
            ("{personality_type}", p.type_name),
            ("{traits}", p.traits),
            ("{tone}", p.tone),
            ("{question}", p.example_question),
            ("{example_response}", p.example_response),
        ):
            text = text.replace(slot, val)
        return text.replace("{task_description}", task)
    return prompt("user_base", normalized).replace("{task_description}", task)


def simulate_user(
    scenario: Scenario,
    assistant_events: list[AssistantEvent],
    gateway: Gateway | None = None,
    seed: int | random.Random | None = None,
    history: list[tuple[str, str]] | None = None,
    answered: set[int] | None = None,
) -> str:
    """Reply to one assistant turn as the simulated user.

    ``history`` holds prior (assistant text, user reply) exchanges and is
    only used for the model-backed levels.
    """
    if scenario.level == 1:
        return rule_reply(scenario, assistant_events, answered)[0]
    if gateway is None:
        raise ValueError("Levels II and III need a gateway")
    text = " ".join(e.text if e.kind is EventKind.FREEFORM else _render_event(e) for e in assistant_events)
    msgs: list[tuple[Role, str]] = []
    for a, u in history or []:
        msgs += [(Role.USER, a), (Role.ASSISTANT, u)]
    msgs.append((Role.USER, text))
    cfg = gateway.config
    req = ChatRequest(
        user_system_prompt(scenario), tuple(msgs), cfg.temperature, cfg.max_output_chars, cfg.model_tag
    )
    return gateway.complete(req).strip()


def _render_event(e: AssistantEvent) -> str:
    label = {
        EventKind.DECOMPOSITION: "[TASK DECOMPOSITION]",
        EventKind.PARAM_EVALUATION: "[PARAMETER EVALUATION]",
        EventKind.QUESTION: "[QUESTION]",
        EventKind.SUMMARY: "[SUMMARY]",
    }[e.kind]
    return f"{label} {e.text}"


# --------------------------------------------------------------------------
# sessions


class Termination(str, Enum):
    SUMMARIZED = "Summarized"
    ROUND_CAP_EXCEEDED = "RoundCapExceeded"
    PARSE_FAILURE = "ParseFailure"
    ASSISTANT_ERROR = "AssistantError"


class Assistant(Protocol):
    def __call__(self, history: list[dict[str, str]]) -> str: ...


@dataclass
class SessionTranscript:
    scenario: Scenario
    turns: list[dict[str, str]]
    questions_asked: int
    final_solution: SolutionPath | None
    termination: Termination
    marker_leak: bool = False
    error: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.scenario.record.record_id,
            "level": self.scenario.level,
            "persona": self.scenario.persona.id if self.scenario.persona else None,
            "api_menu": [d.name for d in self.scenario.api_menu],
            "turns": self.turns,
            "questions_asked": self.questions_asked,
            "final_solution": self.final_solution.to_list() if self.final_solution else None,
            "termination": self.termination.value,
            "marker_leak": self.marker_leak,
            "error": self.error,
        }


def opening_message(scenario: Scenario) -> str:
    names = [d.name for d in scenario.api_menu]
    text = task_statement(scenario.record, names)
    docs = [{"name": d.name, "description": d.description} for d in scenario.api_menu if d.description]
    if docs:
        text += "\nAPI documentation: " + json.dumps(docs, ensure_ascii=False)
    return text


def run_session(
    assistant: Callable[[list[dict[str, str]]], str],
    scenario: Scenario,
    gateway: Gateway | None = None,
    seed: int | random.Random = 0,
    max_idle_turns: int = 3,
) -> SessionTranscript:
    """Alternate assistant and simulated-user turns until a summary, a parse
    failure, the question cap, or an assistant exception ends the session.

    The cap is ``round_cap_per_intent * max(1, |removed|)`` questions; the
    session stops as soon as the assistant reaches it without summarizing.
    Turns with neither a question nor a summary count toward
    ``max_idle_turns``, which also ends the session as RoundCapExceeded.
    """
    rng = as_rng(seed)
    history = [
        {"role": "system", "content": prompt("evaluation")},
        {"role": "user", "content": opening_message(scenario)},
    ]
    exchanges: list[tuple[str, str]] = []
    answered: set[int] = set()
    questions = 0
    idle = 0
    leak = False
    while True:
        try:
            text = assistant(list(history))
        except Exception as exc:  # candidate failures are data, not crashes
            return SessionTranscript(scenario, history, questions, None, Termination.ASSISTANT_ERROR, leak, repr(exc))
        history.append({"role": "assistant", "content": text})
        leak = leak or has_error_markers(text)
        events = parse_turn(text)
        summaries = [e for e in events if e.kind is EventKind.SUMMARY]
        n_q = sum(1 for e in events if e.kind is EventKind.QUESTION)
        if summaries:
            s = summaries[0]
            questions += sum(
                1 for e in events if e.kind is EventKind.QUESTION and e.source_span[0] < s.source_span[0]
            )
            if s.parse_failed:
                return SessionTranscript(scenario, history, questions, None, Termination.PARSE_FAILURE, leak)
            return SessionTranscript(scenario, history, questions, s.solution, Termination.SUMMARIZED, leak)
        questions += n_q
        if n_q == 0:
            idle += 1
        if questions >= scenario.question_cap or idle >= max_idle_turns:
            return SessionTranscript(scenario, history, questions, None, Termination.ROUND_CAP_EXCEEDED, leak)
        if scenario.level == 1:
            reply, ref = rule_reply(scenario, events, answered)
            if ref is not None:
                answered.add(ref.position)
        else:
            reply = simulate_user(scenario, events, gateway, rng, exchanges)
        exchanges.append((text, reply))
        history.append({"role": "user", "content": reply})


def score_session(transcript: SessionTranscript, record: DegradedRecord | None = None) -> SessionTally:
    record = record or transcript.scenario.record
    gold_triples = [
        (c.api_name, n, normalize_value(v)) for c in record.solution.calls for n, v in c.parameters
    ]
    gold_apis = record.solution.api_names
    sol = transcript.final_solution
    present = transcript.termination is Termination.SUMMARIZED and sol is not None
    pred_triples = (
        [(c.api_name, n, normalize_value(v)) for c in sol.calls for n, v in c.parameters] if present else []
    )
    pred_apis = sol.api_names if present else []
    have = set(pred_triples)
    clarified = sum(
        1 for r in record.key_info.removed()
        if (r.api_name, r.name, normalize_value(r.spec.original)) in have
    )
    return SessionTally(
        record_id=record.record_id,
        level=transcript.scenario.level,
        clarified_count=clarified,
        unspecified_count=len(record.key_info.removed()),
        questions_asked=transcript.questions_asked,
        solution_present=present,
        predicted_apis=list(pred_apis),
        gold_apis=list(gold_apis),
        predicted_triples=pred_triples,
        gold_triples=gold_triples,
        termination=transcript.termination.value,
    )


# --------------------------------------------------------------------------
# reference assistants


class OracleAssistant:
    """Plays gold: asks each stored question once, then summarizes."""

    def __init__(self, record: DegradedRecord):
        self.record = record
        self.groups = question_groups(record.key_info)

    def __call__(self, history: list[dict[str, str]]) -> str:
        asked = sum(1 for m in history if m["role"] == "assistant")
        if asked < len(self.groups):
            return f"[QUESTION] {self.groups[asked].question}"
        return summary_text(self.record.solution)


class ScriptedAssistant:
    """Replays a fixed list of responses, repeating the last one.

    ``{gold_summary}`` in a response expands to the gold summary text.
    """

    def __init__(self, responses: list[str], record: DegradedRecord | None = None):
        if not responses:
            raise ValueError("script needs at least one response")
        self.responses = list(responses)
        self.record = record

    @classmethod
    def from_file(cls, path: str | Path, record: DegradedRecord | None = None) -> "ScriptedAssistant":
        data = json.loads(Path(path).read_text("utf-8"))
        return cls(data["responses"] if isinstance(data, dict) else data, record)

    def __call__(self, history: list[dict[str, str]]) -> str:
        i = sum(1 for m in history if m["role"] == "assistant")
        text = self.responses[min(i, len(self.responses) - 1)]
        if self.record is not None:
            text = text.replace("{gold_summary}", summary_text(self.record.solution))
        return text


class GatewayAssistant:
    """Candidate model served behind a chat endpoint, reached via the gateway."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def __call__(self, history: list[dict[str, str]]) -> str:
        system = history[0]["content"] if history and history[0]["role"] == "system" else ""
        msgs = [
            (Role.USER if m["role"] == "user" else Role.ASSISTANT, m["content"])
            for m in history if m["role"] != "system"
        ]
        cfg = self.gateway.config
        req = ChatRequest(system, tuple(msgs), cfg.temperature, cfg.max_output_chars, cfg.model_tag)
        return self.gateway.complete(req)


# --------------------------------------------------------------------------
# batch evaluation


def load_eval_records(path: str | Path) -> list[DegradedRecord]:
    """Records to evaluate from a degraded, dialogue or augmented JSONL.

    Augmented copies are skipped; each source record is evaluated once.
    """
    out: list[DegradedRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("injection"):
                continue
            rec = DegradedRecord.from_dict(row.get("source", row))
            if rec.record_id not in seen:
                seen.add(rec.record_id)
                out.append(rec)
    return out


def evaluate_records(
    records: list[DegradedRecord],
    level: int,
    assistant_for: Callable[[DegradedRecord], Callable[[list[dict[str, str]]], str]],
    gateway: Gateway | None = None,
    seed: int = 0,
    personas: list[Persona] | None = None,
    distractors: list[ApiDoc] | None = None,
    round_cap_per_intent: int = 5,
    workers: int = 1,
) -> tuple[list[SessionTally], list[SessionTranscript]]:
    """Run one session per record; scenario and session seeds derive from
    (seed, level, record_id), so results do not depend on ``workers``."""
    from concurrent.futures import ThreadPoolExecutor

    from .util import derive_seed

    if level == 3 and personas is None:
        personas = load_personas()

    def one(rec: DegradedRecord) -> tuple[SessionTally, SessionTranscript]:
        scenario = build_scenario(
            rec, level, personas, distractors, derive_seed(seed, "scenario", level, rec.record_id),
            round_cap_per_intent=round_cap_per_intent,
        )
        tr = run_session(assistant_for(rec), scenario, gateway, derive_seed(seed, "session", level, rec.record_id))
        return score_session(tr), tr

    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    return [t for t, _ in results], [s for _, s in results]

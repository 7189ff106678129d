"""Error-correction augmentation.

Five error types are injected one per dialogue. ClearlyStated, Imprecise and
Irrelevant texts come from the model; Redundant and Incomplete are produced
by rule. The erroneous segment is wrapped in ``<SOE>``/``<EOE>`` and followed
by a templated correction that starts "Sorry, I made a mistake."
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Any

from .dialogue import block_starts, question_groups, question_text
from .gateway import Gateway
from .model import (
    EOE,
    ERROR_TYPES,
    SOE,
    SUMMARY_LEAD,
    DialogueRecord,
    DialogueTurn,
    ErrorInjection,
    ErrorType,
    ParamRef,
    SolutionPath,
    Speaker,
    ToolCall,
    TurnKind,
    serialize_solution,
)
from .resources import ordinal, prompt
from .util import MalformedModelJson, as_rng, ask_json

# Table 2 counts of the reference corpus, in ERROR_TYPES order.
TABLE2_COUNTS = (250, 288, 284, 243, 500)

CORRECTION_LEAD = "Sorry, I made a mistake."

CORRECTION_TEMPLATES = {
    ErrorType.CLEARLY_STATED: (
        CORRECTION_LEAD + ' The parameter "{param}" for the API "{api}" has a value of '
        "\"{value}\", which was clearly stated in the user's task, so I don't need to ask about it."
    ),
    ErrorType.IMPRECISE: (
        CORRECTION_LEAD + " My question wasn't clear, so let me rephrase it for better understanding."
    ),
    ErrorType.IRRELEVANT: (
        CORRECTION_LEAD + " This question isn't relevant to using the APIs to solve the user's task. "
        "Let me ask something more helpful instead."
    ),
    ErrorType.REDUNDANT: (
        CORRECTION_LEAD + ' The parameter "{param}" for the API "{api}" has a value of "{value}", '
        "which has already been asked in the past, so there is no need to ask again."
    ),
    ErrorType.INCOMPLETE: (
        CORRECTION_LEAD + " I still lack some key information, so I need to ask further questions."
    ),
}

# User replies to unanswerable questions, as they appear in the reference dialogues.
REFUSAL_REPLIES = (
    "I really wish I could help with that, but unfortunately, I don't have the information "
    "you're looking for. Please feel free to inquire about something else.",
    "Unfortunately, I don't have that information right now. What else can I help you with?",
)

SEMANTIC_TYPES = (ErrorType.CLEARLY_STATED, ErrorType.IMPRECISE, ErrorType.IRRELEVANT)
_SEMANTIC_FIELD = {
    ErrorType.CLEARLY_STATED: "question",
    ErrorType.IMPRECISE: "imprecise_question",
    ErrorType.IRRELEVANT: "irrelevant_question",
}
_SEMANTIC_PROMPT = {
    ErrorType.CLEARLY_STATED: "error_clearly_stated",
    ErrorType.IMPRECISE: "error_imprecise",
    ErrorType.IRRELEVANT: "error_irrelevant",
}


class Infeasible(ValueError):
    pass


@dataclass(frozen=True)
class InjectionPolicy:
    type_weights: tuple[float, ...] = TABLE2_COUNTS
    augment_fraction: float = 1.0

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in self.type_weights)
        if len(w) != len(ERROR_TYPES) or any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError("type_weights must be 5 non-negative reals with positive sum")
        object.__setattr__(self, "type_weights", tuple(x / sum(w) for x in w))
        if not 0.0 <= self.augment_fraction <= 1.0:
            raise ValueError("augment_fraction must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InjectionPolicy":
        w = d.get("type_weights", TABLE2_COUNTS)
        if isinstance(w, dict):
            w = tuple(w[t.value] for t in ERROR_TYPES)
        return cls(tuple(w), float(d.get("augment_fraction", 1.0)))


@dataclass(frozen=True)
class InjectionPlan:
    """Type and position chosen for one dialogue, before any text exists."""

    error_type: ErrorType
    position: int
    # Redundant: the earlier removed parameter whose question is repeated.
    source_position: int | None = None


# --------------------------------------------------------------------------
# feasibility and planning


def redundant_pairs(dialogue: DialogueRecord) -> dict[int, list[int]]:
    """Feasible targets (pos > 1) mapped to removed predecessors."""
    params = dialogue.source.key_info.params()
    removed = [p.position for p in params if p.spec.removed]
    out = {}
    for p in params:
        prev = [r for r in removed if r < p.position]
        if p.position > 1 and prev:
            out[p.position] = prev
    return out


def feasible_types(dialogue: DialogueRecord) -> list[ErrorType]:
    ki = dialogue.source.key_info
    n = len(ki.params())
    out = []
    if ki.specified():
        out.append(ErrorType.CLEARLY_STATED)
    if ki.removed():
        out += [ErrorType.IMPRECISE, ErrorType.IRRELEVANT]
    if redundant_pairs(dialogue):
        out.append(ErrorType.REDUNDANT)
    if n >= 1:
        out.append(ErrorType.INCOMPLETE)
    return out


def plan_injection(
    dialogue: DialogueRecord,
    policy: InjectionPolicy,
    seed: int | random.Random,
    force_type: ErrorType | None = None,
) -> InjectionPlan | None:
    """Choose an error type and a feasible position, or None.

    An infeasible draw is replaced by a draw among the feasible types with
    their weights renormalized.
    """
    rng = as_rng(seed)
    if force_type is None and rng.random() >= policy.augment_fraction:
        return None
    feasible = feasible_types(dialogue)
    if force_type is not None:
        if force_type not in feasible:
            return None
        tau = force_type
    else:
        tau = rng.choices(ERROR_TYPES, weights=policy.type_weights)[0]
        if tau not in feasible:
            weights = [policy.type_weights[ERROR_TYPES.index(t)] for t in feasible]
            if sum(weights) <= 0:
                return None
            tau = rng.choices(feasible, weights=weights)[0]
    ki = dialogue.source.key_info
    if tau is ErrorType.CLEARLY_STATED:
        return InjectionPlan(tau, rng.choice(ki.specified()).position)
    if tau in (ErrorType.IMPRECISE, ErrorType.IRRELEVANT):
        return InjectionPlan(tau, rng.choice(ki.removed()).position)
    if tau is ErrorType.REDUNDANT:
        _, target, prev = generate_redundant_error(dialogue, rng)
        return InjectionPlan(tau, target, prev)
    k = rng.randrange(len(ki.params()))
    return InjectionPlan(tau, k)


# --------------------------------------------------------------------------
# error text


def _param_at(dialogue: DialogueRecord, pos: int) -> ParamRef:
    for p in dialogue.source.key_info.params():
        if p.position == pos:
            return p
    raise KeyError(f"no parameter at position {pos}")


def _semantic_key_info(dialogue: DialogueRecord, tau: ErrorType) -> dict[str, Any]:
    """key_info as shown to the error prompts (positions dropped).

    ClearlyStated asks the model to treat a stated parameter as missing, so
    the removed flags are inverted for that prompt.
    """
    block = dialogue.source.key_info.to_dict()
    for entry in block.values():
        for spec in entry["parameters"].values():
            spec.pop("position", None)
            spec.pop("shared", None)
            if tau is ErrorType.CLEARLY_STATED:
                spec["removed"] = not spec["removed"]
    return block


def choose_pos_ordinal(dialogue: DialogueRecord, tau: ErrorType, pos: int) -> int:
    """1-based ordinal of the target among the parameters its prompt scans."""
    params = dialogue.source.key_info.params()
    if tau is ErrorType.CLEARLY_STATED:
        pool = [p.position for p in params if not p.spec.removed]
    elif tau is ErrorType.IMPRECISE:
        pool = [p.position for p in params if p.spec.removed]
    else:
        pool = [p.position for p in params]
    return pool.index(pos) + 1


def semantic_request(dialogue: DialogueRecord, tau: ErrorType, pos: int) -> tuple[str, dict[str, Any]]:
    system = prompt(_SEMANTIC_PROMPT[tau]).replace(
        "{choose_pos}", ordinal(choose_pos_ordinal(dialogue, tau, pos))
    )
    src = dialogue.source
    payload = {
        "original_query": src.original_query,
        "unspecified_query": src.unspecified_query,
        "key_info": _semantic_key_info(dialogue, tau),
    }
    return system, payload


def generate_semantic_error(
    dialogue: DialogueRecord, tau: ErrorType, pos: int, gateway: Gateway
) -> str:
    if tau not in SEMANTIC_TYPES:
        raise ValueError(f"{tau.value} is not a model-generated error type")
    target = _param_at(dialogue, pos)
    want_removed = tau is not ErrorType.CLEARLY_STATED
    if target.spec.removed != want_removed:
        raise Infeasible(f"position {pos} is not valid for {tau.value}")
    key = list(dialogue.source.key_info.to_dict().keys())[target.call_index]
    fld = _SEMANTIC_FIELD[tau]
    original_q = target.spec.question

    def check(reply: dict[str, Any]) -> str:
        block = reply.get("key_info", reply)
        try:
            text = block[key]["parameters"][target.name][fld]
        except (KeyError, TypeError):
            raise MalformedModelJson(f"no {fld!r} on {key}.{target.name}") from None
        if not isinstance(text, str) or not text.strip():
            raise MalformedModelJson(f"empty {fld!r}")
        text = text.strip()
        if tau is not ErrorType.CLEARLY_STATED and text == original_q:
            raise MalformedModelJson("error question repeats the stored question")
        return text

    system, payload = semantic_request(dialogue, tau, pos)
    return ask_json(gateway, system, payload, check)


def generate_redundant_error(
    dialogue: DialogueRecord, seed: int | random.Random
) -> tuple[str, int, int]:
    """Repeat an earlier removed parameter's question at a later position.

    Returns (error text, target position, previous position).
    """
    rng = as_rng(seed)
    pairs = redundant_pairs(dialogue)
    if not pairs:
        raise Infeasible("no target with pos > 1 and an earlier removed parameter")
    target = rng.choice(sorted(pairs))
    prev = rng.choice(pairs[target])
    question = _param_at(dialogue, prev).spec.question
    if not question:
        raise Infeasible(f"parameter at position {prev} has no question")
    return question, target, prev


def premature_solution(dialogue: DialogueRecord, k: int) -> SolutionPath:
    known = {p.position for p in dialogue.source.key_info.params() if p.position <= k}
    calls = []
    for entry in dialogue.source.key_info.entries:
        params = tuple(
            (n, s.original if s.position in known else f"<unknown_{n}>") for n, s in entry.parameters
        )
        calls.append(ToolCall(entry.api_name, params))
    return SolutionPath(tuple(calls))


def generate_incomplete_error(
    dialogue: DialogueRecord, seed: int | random.Random, k: int | None = None
) -> tuple[str, int]:
    """Premature summary: positions <= k keep their values, the rest become
    ``<unknown_<name>>``. Returns (summary text, k)."""
    n = len(dialogue.source.key_info.params())
    if n < 1:
        raise Infeasible("dialogue has no parameters")
    if k is None:
        k = as_rng(seed).randrange(n)
    return SUMMARY_LEAD + serialize_solution(premature_solution(dialogue, k)), k


def render_correction(
    tau: ErrorType, param: str = "", api: str = "", value: str = "", pos: int | None = None
) -> str:
    return CORRECTION_TEMPLATES[tau].format(param=param, api=api, value=value)


# --------------------------------------------------------------------------
# splicing


def error_segment(tau: ErrorType, error_text: str) -> str:
    body = error_text if tau is ErrorType.INCOMPLETE else question_text(error_text)
    return f"{SOE} {body} {EOE}"


def _insertion_index(dialogue: DialogueRecord, threshold: int) -> int:
    """Turn index before the first clarification block whose first position
    exceeds ``threshold``; the summary index when there is none."""
    for idx, pos in block_starts(dialogue):
        if pos > threshold:
            return idx
    return len(dialogue.turns) - 1


def inject(
    dialogue: DialogueRecord,
    plan: InjectionPlan,
    error_text: str,
    correction_text: str,
    refusal: str = REFUSAL_REPLIES[0],
) -> DialogueRecord:
    """Splice the error/correction pair into a copy of ``dialogue``."""
    tau = plan.error_type
    turns = list(dialogue.turns)
    err = DialogueTurn(
        Speaker.ASSISTANT,
        error_segment(tau, error_text),
        TurnKind.SUMMARY if tau is ErrorType.INCOMPLETE else TurnKind.QUESTION,
    )
    corr = DialogueTurn(Speaker.ASSISTANT, correction_text, TurnKind.CORRECTION)
    if tau in (ErrorType.IMPRECISE, ErrorType.IRRELEVANT):
        idx = next(
            i for i, g in block_starts(dialogue)
            if any(m.position == plan.position for m in _group_at(dialogue, i).members)
        )
        turns[idx:idx] = [err, DialogueTurn(Speaker.USER, refusal, TurnKind.USER_REPLY), corr]
    else:
        if tau is ErrorType.INCOMPLETE:
            idx = _insertion_index(dialogue, plan.position)
        else:
            idx = _insertion_index(dialogue, plan.position - 1)
        turns[idx:idx] = [err, corr]
    injection = ErrorInjection(tau, plan.position, error_text, correction_text, plan.source_position)
    return DialogueRecord(f"{dialogue.record_id}#aug", dialogue.source, tuple(turns), injection)


def _group_at(dialogue: DialogueRecord, turn_index: int):
    groups = question_groups(dialogue.source.key_info)
    idxs = [i for i, _ in block_starts(dialogue)]
    return groups[idxs.index(turn_index)]


def strip_injection(augmented: DialogueRecord) -> DialogueRecord:
    """Inverse of :func:`inject`: drop the error turn, any refusal reply that
    follows it, and the correction turn."""
    out: list[DialogueTurn] = []
    skip_user = False
    for t in augmented.turns:
        if SOE in t.text:
            skip_user = True
            continue
        if skip_user and t.speaker is Speaker.USER:
            skip_user = False
            continue
        skip_user = False
        if t.kind is TurnKind.CORRECTION:
            continue
        out.append(t)
    rid = augmented.record_id.removesuffix("#aug")
    return DialogueRecord(rid, augmented.source, tuple(out), None)


def augment_dialogue(
    dialogue: DialogueRecord,
    policy: InjectionPolicy,
    seed: int | random.Random,
    gateway: Gateway | None = None,
    force_type: ErrorType | None = None,
) -> DialogueRecord | None:
    """Plan, generate, correct and splice one error; None when not augmented."""
    rng = as_rng(seed)
    plan = plan_injection(dialogue, policy, rng, force_type=force_type)
    if plan is None:
        return None
    tau = plan.error_type
    if tau in SEMANTIC_TYPES:
        if gateway is None:
            raise ValueError(f"{tau.value} errors need a gateway")
        text = generate_semantic_error(dialogue, tau, plan.position, gateway)
        ref = _param_at(dialogue, plan.position)
    elif tau is ErrorType.REDUNDANT:
        ref = _param_at(dialogue, plan.source_position)
        text = ref.spec.question or ""
    else:
        text, _ = generate_incomplete_error(dialogue, rng, k=plan.position)
        ref = None
    correction = render_correction(
        tau,
        param=ref.name if ref else "",
        api=ref.api_name if ref else "",
        value=ref.spec.original if ref else "",
        pos=plan.position,
    )
    refusal = REFUSAL_REPLIES[rng.randrange(len(REFUSAL_REPLIES))]
    return inject(dialogue, plan, text, correction, refusal)


def augmentation_stats_table(stats: dict[str, int]) -> str:
    rows = [f"{t.value:<16}{stats.get(t.value, 0):>8}" for t in ERROR_TYPES]
    rows.append(f"{'Total':<16}{sum(stats.values()):>8}")
    return "\n".join(rows)

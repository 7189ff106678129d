"""Clarification dialogue construction.

Model-dependent content (task decomposition, clarification questions) is
generated first and stored on the record; assembly into turns is a
deterministic template pass over that record.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .gateway import Gateway
from .model import (
    DegradedRecord,
    DialogueRecord,
    DialogueTurn,
    KeyInfo,
    ParamRef,
    ParameterSpec,
    Speaker,
    TurnKind,
    summary_text,
)
from .resources import data_path, prompt
from .util import MalformedModelJson, as_rng, ask_json

log = logging.getLogger(__name__)

SLOT = "[value]"


class StepCountMismatch(MalformedModelJson):
    """Decomposition step count (or API naming) does not match the solution."""


class MissingQuestion(MalformedModelJson):
    pass


class Tone(str, Enum):
    NEUTRAL = "Neutral"
    FRIENDLY = "Friendly"
    DISMISSIVE = "Dismissive"
    IRRITATED = "Irritated"


@dataclass(frozen=True)
class ToneTemplateSet:
    tone: Tone
    templates: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tone", Tone(self.tone))
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise ValueError("a tone needs at least one template")
        for t in self.templates:
            if t.count(SLOT) != 1:
                raise ValueError(f"template must contain exactly one {SLOT}: {t!r}")


def load_tones(path: str | Path | None = None) -> list[ToneTemplateSet]:
    """Read a tone file: a JSON array (or JSONL) of ``{"tone", "templates"}``."""
    path = Path(path) if path else data_path("tones.json")
    text = path.read_text("utf-8").strip()
    rows = json.loads(text) if text.startswith("[") else [json.loads(l) for l in text.splitlines() if l.strip()]
    return [ToneTemplateSet(r["tone"], tuple(r["templates"])) for r in rows]


def render_user_reply(
    value: str,
    tone_set: ToneTemplateSet,
    seed: int | random.Random | None = None,
    index: int | None = None,
) -> str:
    if not value:
        raise ValueError("value must be non-empty")
    if index is None:
        index = as_rng(seed).randrange(len(tone_set.templates))
    return tone_set.templates[index].replace(SLOT, value)


# --------------------------------------------------------------------------
# model-generated content


def _api_list(record: DegradedRecord) -> list[dict[str, str]]:
    return [
        {"name": name, "description": record.api_docs.get(name, "")}
        for name in record.solution.api_names
    ]


def decompose_task(record: DegradedRecord, gateway: Gateway) -> DegradedRecord:
    """Ask for one ``Step n: ... using <API>.`` line per call, in call order."""
    apis = record.solution.api_names

    def check(reply: dict[str, Any]) -> tuple[str, ...]:
        steps = reply.get("tool_steps")
        if not isinstance(steps, list) or not all(isinstance(s, str) for s in steps):
            raise MalformedModelJson("'tool_steps' must be a list of strings")
        if len(steps) != len(apis):
            raise StepCountMismatch(f"{len(steps)} steps for {len(apis)} calls")
        for i, (step, api) in enumerate(zip(steps, apis)):
            if api not in step:
                raise StepCountMismatch(f"step {i + 1} does not name {api}")
        return tuple(s.strip() for s in steps)

    payload = {"Query": record.unspecified_query, "APIs": _api_list(record)}
    steps = ask_json(gateway, prompt("decompose"), payload, check)
    return replace(record, tool_steps=steps)


def _question_payload(record: DegradedRecord) -> dict[str, Any]:
    block = record.key_info.to_dict()
    for entry in block.values():
        for spec in entry["parameters"].values():
            spec.pop("position", None)
    return {
        "original_query": record.original_query,
        "unspecified_query": record.unspecified_query,
        "key_info": block,
    }


def generate_questions(record: DegradedRecord, gateway: Gateway) -> DegradedRecord:
    """Attach a clarification question to every removed parameter.

    Identical question strings across several removed parameters are the
    prompt's merge rule at work; those parameters are flagged ``shared``.
    """
    removed = record.key_info.removed()
    if not removed:
        return record
    keys = list(record.key_info.to_dict().keys())

    def check(reply: dict[str, Any]) -> dict[tuple[int, str], str]:
        block = reply.get("key_info", reply)
        found: dict[tuple[int, str], str] = {}
        for key, entry in zip(keys, record.key_info.entries):
            params = ((block.get(key) or {}).get("parameters")) if isinstance(block, dict) else None
            if not isinstance(params, dict):
                continue
            for name, spec in entry.parameters:
                q = (params.get(name) or {}).get("question") if isinstance(params.get(name), dict) else None
                if not isinstance(q, str) or not q.strip():
                    continue
                if not spec.removed:
                    log.warning("dropping question on retained parameter %s.%s", key, name)
                    continue
                found[(entry.call_index, name)] = q.strip()
        missing = [f"{r.api_name}.{r.name}" for r in removed if (r.call_index, r.name) not in found]
        if missing:
            raise MissingQuestion(f"no question for {missing}")
        return found

    found = ask_json(gateway, prompt("questions"), _question_payload(record), check)
    counts: dict[str, int] = {}
    for q in found.values():
        counts[q] = counts.get(q, 0) + 1
    ki = record.key_info
    for (ci, name), q in found.items():
        spec = ki.get(ci, name)
        ki = ki.with_param(ci, name, replace(spec, question=q, shared=counts[q] > 1))
    return replace(record, key_info=ki)


# --------------------------------------------------------------------------
# template assembly


def task_statement(record: DegradedRecord, menu: list[str] | None = None) -> str:
    menu = record.menu if menu is None else menu
    return f"The task is: {record.unspecified_query} Some relevant APIs: {menu!r}"


def decomposition_text(steps: tuple[str, ...] | list[str]) -> str:
    return (
        f"[TASK DECOMPOSITION] The task can be simplified into {len(steps)} steps for solving. "
        + " ".join(steps)
    )


def evaluation_line(ref: ParamRef) -> str:
    if ref.spec.removed:
        return f'Parameter "{ref.name}" for API "{ref.api_name}" lacks a clear value.'
    return f'Parameter "{ref.name}" for API "{ref.api_name}" has a value of "{ref.spec.original}".'


def evaluation_text(key_info: KeyInfo) -> str:
    lines = " ".join(evaluation_line(r) for r in key_info.params())
    return f"[PARAMETER EVALUATION] The information I currently have is: {lines}"


def confirmation_text(ref: ParamRef) -> str:
    return (
        f'[PARAMETER EVALUATION] Now I know that the parameter "{ref.name}" for the API '
        f'"{ref.api_name}" has a value of "{ref.spec.original}".'
    )


def question_text(question: str) -> str:
    return f"[QUESTION] {question}"


@dataclass(frozen=True)
class QuestionGroup:
    """One asked question and the removed parameters it resolves."""

    question: str
    members: tuple[ParamRef, ...]

    @property
    def position(self) -> int:
        return self.members[0].position


def question_groups(key_info: KeyInfo) -> list[QuestionGroup]:
    """Removed parameters grouped by shared question, ordered by first position."""
    groups: dict[str, list[ParamRef]] = {}
    order: list[str] = []
    for ref in key_info.removed():
        q = ref.spec.question or f"Could you please specify the {ref.name} for {ref.api_name}?"
        if ref.spec.shared and q in groups:
            groups[q].append(ref)
            continue
        key = q if ref.spec.shared else f"{q}\x00{ref.position}"
        groups[key] = [ref]
        order.append(key)
    return [QuestionGroup(k.split("\x00")[0], tuple(groups[k])) for k in order]


def clarification_turns(
    group: QuestionGroup, tone: ToneTemplateSet, rng: random.Random
) -> list[DialogueTurn]:
    reply = render_user_reply(group.members[0].spec.original, tone, rng)
    turns = [
        DialogueTurn(Speaker.ASSISTANT, question_text(group.question), TurnKind.QUESTION),
        DialogueTurn(Speaker.USER, reply, TurnKind.USER_REPLY),
    ]
    turns += [
        DialogueTurn(Speaker.ASSISTANT, confirmation_text(m), TurnKind.CONFIRMATION)
        for m in group.members
    ]
    return turns


def assemble_dialogue(
    record: DegradedRecord,
    tones: list[ToneTemplateSet],
    seed: int | random.Random,
    record_id: str | None = None,
) -> DialogueRecord:
    """Lay out the full dialogue: statement, decomposition, evaluation,
    one clarification block per question in position order, then the summary.

    The tone is drawn once per dialogue; reply templates per reply.
    """
    if record.tool_steps is None:
        raise ValueError("record has no tool_steps; run decompose_task first")
    rng = as_rng(seed)
    tone = tones[rng.randrange(len(tones))]
    turns = [
        DialogueTurn(Speaker.USER, task_statement(record), TurnKind.TASK_STATEMENT),
        DialogueTurn(Speaker.ASSISTANT, decomposition_text(record.tool_steps), TurnKind.DECOMPOSITION),
        DialogueTurn(Speaker.ASSISTANT, evaluation_text(record.key_info), TurnKind.PARAM_EVALUATION),
    ]
    for group in question_groups(record.key_info):
        turns += clarification_turns(group, tone, rng)
    turns.append(DialogueTurn(Speaker.ASSISTANT, summary_text(record.solution), TurnKind.SUMMARY))
    return DialogueRecord(record_id or record.record_id, record, tuple(turns))


def block_starts(dialogue: DialogueRecord) -> list[tuple[int, int]]:
    """(turn index, first parameter position) for each clarification block."""
    groups = question_groups(dialogue.source.key_info)
    idxs = [i for i, t in enumerate(dialogue.turns) if t.kind is TurnKind.QUESTION]
    return [(i, g.position) for i, g in zip(idxs, groups)]

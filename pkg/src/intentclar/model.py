"""Shared data model: tool solutions, key_info, degraded records and dialogues.

Every type here is a frozen dataclass. Records move between pipeline stages as
JSON objects (one per JSONL line); ``to_dict``/``from_dict`` pairs define that
wire format.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterator

SOE = "<SOE>"
EOE = "<EOE>"

SUMMARY_LEAD = (
    "[SUMMARY] I have all the information needed and can now call the relevant "
    "APIs to solve the task. The solution path is as follows: "
)


class ComplexityLevel(str, Enum):
    FULLY_SPECIFIED = "FullySpecified"
    SINGLE_API_SINGLE_PARAM = "SingleApiSingleParam"
    SINGLE_API_MULTI_PARAM = "SingleApiMultiParam"
    MULTI_API_MULTI_PARAM = "MultiApiMultiParam"


LEVEL_ORDER = (
    ComplexityLevel.FULLY_SPECIFIED,
    ComplexityLevel.SINGLE_API_SINGLE_PARAM,
    ComplexityLevel.SINGLE_API_MULTI_PARAM,
    ComplexityLevel.MULTI_API_MULTI_PARAM,
)


class Speaker(str, Enum):
    SYSTEM = "System"
    USER = "User"
    ASSISTANT = "Assistant"


class TurnKind(str, Enum):
    TASK_STATEMENT = "TaskStatement"
    DECOMPOSITION = "Decomposition"
    PARAM_EVALUATION = "ParamEvaluation"
    QUESTION = "Question"
    USER_REPLY = "UserReply"
    CONFIRMATION = "Confirmation"
    CORRECTION = "Correction"
    SUMMARY = "Summary"
    MIXED = "Mixed"


ASSISTANT_ONLY_KINDS = frozenset(
    {TurnKind.QUESTION, TurnKind.SUMMARY, TurnKind.CONFIRMATION, TurnKind.CORRECTION}
)
USER_ONLY_KINDS = frozenset({TurnKind.USER_REPLY})


class ErrorType(str, Enum):
    CLEARLY_STATED = "ClearlyStated"
    IMPRECISE = "Imprecise"
    IRRELEVANT = "Irrelevant"
    REDUNDANT = "Redundant"
    INCOMPLETE = "Incomplete"


ERROR_TYPES = tuple(ErrorType)


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class ToolCall:
    api_name: str
    parameters: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "parameters", tuple((str(n), str(v)) for n, v in self.parameters)
        )

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.parameters]

    def value(self, name: str) -> str:
        for n, v in self.parameters:
            if n == name:
                return v
        raise KeyError(name)


@dataclass(frozen=True)
class SolutionPath:
    calls: tuple[ToolCall, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "calls", tuple(self.calls))

    def __len__(self) -> int:
        return len(self.calls)

    def __iter__(self) -> Iterator[ToolCall]:
        return iter(self.calls)

    @property
    def api_names(self) -> list[str]:
        return [c.api_name for c in self.calls]

    def to_list(self, field_name: str = "parameters") -> list[dict[str, Any]]:
        return [
            {
                "task": c.api_name,
                field_name: [{"name": n, "value": v} for n, v in c.parameters],
            }
            for c in self.calls
        ]

    @classmethod
    def from_list(cls, items: list[dict[str, Any]]) -> "SolutionPath":
        calls = []
        for item in items:
            params = item.get("parameters", item.get("arguments", []))
            calls.append(
                ToolCall(item["task"], tuple((p["name"], p["value"]) for p in params))
            )
        return cls(tuple(calls))


def serialize_solution(solution: SolutionPath, field_name: str = "parameters") -> str:
    """Compact JSON form used inside ``[SUMMARY]`` turns."""
    return json.dumps(
        solution.to_list(field_name), ensure_ascii=False, separators=(",", ":")
    )


def summary_text(solution: SolutionPath) -> str:
    return SUMMARY_LEAD + serialize_solution(solution)


def parameter_positions(solution: SolutionPath) -> list[tuple[str, str, int]]:
    """Enumerate parameters in call order, then declaration order, from 1."""
    out = []
    pos = 0
    for call in solution.calls:
        for name, _ in call.parameters:
            pos += 1
            out.append((call.api_name, name, pos))
    return out


# --------------------------------------------------------------------------
# key_info


@dataclass(frozen=True)
class ParameterSpec:
    removed: bool
    original: str
    current: str
    position: int
    question: str | None = None
    shared: bool = False

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "removed": self.removed,
            "original": self.original,
            "current": self.current,
            "position": self.position,
        }
        if self.question is not None:
            d["question"] = self.question
        if self.shared:
            d["shared"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ParameterSpec":
        return cls(
            removed=bool(d["removed"]),
            original=str(d["original"]),
            current=str(d.get("current", d["original"])),
            position=int(d["position"]),
            question=d.get("question"),
            shared=bool(d.get("shared", False)),
        )


@dataclass(frozen=True)
class KeyInfoEntry:
    api_name: str
    call_index: int
    parameters: tuple[tuple[str, ParameterSpec], ...]

    def param(self, name: str) -> ParameterSpec:
        for n, spec in self.parameters:
            if n == name:
                return spec
        raise KeyError(name)


@dataclass(frozen=True)
class ParamRef:
    """One parameter slot in a record, flattened for position-ordered walks."""

    call_index: int
    api_name: str
    name: str
    spec: ParameterSpec

    @property
    def position(self) -> int:
        return self.spec.position


@dataclass(frozen=True)
class KeyInfo:
    entries: tuple[KeyInfoEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))

    def params(self) -> list[ParamRef]:
        refs = [
            ParamRef(e.call_index, e.api_name, n, s)
            for e in self.entries
            for n, s in e.parameters
        ]
        return sorted(refs, key=lambda r: r.position)

    def removed(self) -> list[ParamRef]:
        return [r for r in self.params() if r.spec.removed]

    def specified(self) -> list[ParamRef]:
        return [r for r in self.params() if not r.spec.removed]

    def mapping(self) -> dict[tuple[int, str], tuple[str, str]]:
        """The removal mapping: (call_index, param) -> (original, current)."""
        return {
            (r.call_index, r.name): (r.spec.original, r.spec.current)
            for r in self.removed()
        }

    def get(self, call_index: int, name: str) -> ParameterSpec:
        return self.entries[call_index].param(name)

    def with_param(self, call_index: int, name: str, spec: ParameterSpec) -> "KeyInfo":
        entries = list(self.entries)
        e = entries[call_index]
        entries[call_index] = replace(
            e, parameters=tuple((n, spec if n == name else s) for n, s in e.parameters)
        )
        return KeyInfo(tuple(entries))

    @classmethod
    def from_solution(
        cls, solution: SolutionPath, removed: set[tuple[int, str]] | None = None
    ) -> "KeyInfo":
        removed = removed or set()
        entries = []
        pos = 0
        for ci, call in enumerate(solution.calls):
            params = []
            for name, value in call.parameters:
                pos += 1
                params.append(
                    (name, ParameterSpec((ci, name) in removed, value, value, pos))
                )
            entries.append(KeyInfoEntry(call.api_name, ci, tuple(params)))
        return cls(tuple(entries))

    def to_dict(self, solution: SolutionPath | None = None) -> dict[str, Any]:
        keys = entry_keys([e.api_name for e in self.entries])
        return {
            k: {"parameters": {n: s.to_dict() for n, s in e.parameters}}
            for k, e in zip(keys, self.entries)
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], solution: SolutionPath) -> "KeyInfo":
        keys = entry_keys(solution.api_names)
        entries = []
        for ci, (key, call) in enumerate(zip(keys, solution.calls)):
            block = d[key]["parameters"]
            params = tuple((n, ParameterSpec.from_dict(block[n])) for n in call.names)
            entries.append(KeyInfoEntry(call.api_name, ci, params))
        return cls(tuple(entries))


def entry_keys(api_names: list[str]) -> list[str]:
    """JSON keys for key_info blocks.

    A unique API keeps its bare name; an API called more than once is keyed
    ``name#<call_index>`` for every occurrence.
    """
    counts = Counter(api_names)
    return [n if counts[n] == 1 else f"{n}#{i}" for i, n in enumerate(api_names)]


def level_for(removed: list[tuple[int, str]]) -> ComplexityLevel:
    """Complexity level implied by a set of removed (call_index, param) slots."""
    if not removed:
        return ComplexityLevel.FULLY_SPECIFIED
    if len(removed) == 1:
        return ComplexityLevel.SINGLE_API_SINGLE_PARAM
    if len({ci for ci, _ in removed}) == 1:
        return ComplexityLevel.SINGLE_API_MULTI_PARAM
    return ComplexityLevel.MULTI_API_MULTI_PARAM


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class DegradedRecord:
    record_id: str
    original_query: str
    unspecified_query: str
    solution: SolutionPath
    key_info: KeyInfo
    complexity_level: ComplexityLevel
    tool_steps: tuple[str, ...] | None = None
    relevant_apis: tuple[str, ...] | None = None
    api_docs: dict[str, str] = field(default_factory=dict)

    @property
    def menu(self) -> list[str]:
        """API names shown to the assistant in the task statement."""
        if self.relevant_apis:
            return list(self.relevant_apis)
        return list(dict.fromkeys(self.solution.api_names))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "record_id": self.record_id,
            "original_query": self.original_query,
            "unspecified_query": self.unspecified_query,
            "solution": self.solution.to_list(),
            "key_info": self.key_info.to_dict(),
            "complexity_level": self.complexity_level.value,
        }
        if self.tool_steps is not None:
            d["tool_steps"] = list(self.tool_steps)
        if self.relevant_apis is not None:
            d["relevant_apis"] = list(self.relevant_apis)
        if self.api_docs:
            d["api_docs"] = dict(self.api_docs)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DegradedRecord":
        solution = SolutionPath.from_list(d["solution"])
        return cls(
            record_id=str(d["record_id"]),
            original_query=d["original_query"],
            unspecified_query=d["unspecified_query"],
            solution=solution,
            key_info=KeyInfo.from_dict(d["key_info"], solution),
            complexity_level=ComplexityLevel(d["complexity_level"]),
            tool_steps=tuple(d["tool_steps"]) if d.get("tool_steps") is not None else None,
            relevant_apis=(
                tuple(d["relevant_apis"]) if d.get("relevant_apis") is not None else None
            ),
            api_docs=dict(d.get("api_docs") or {}),
        )


@dataclass(frozen=True)
class DialogueTurn:
    speaker: Speaker
    text: str
    kind: TurnKind

    def to_dict(self) -> dict[str, str]:
        return {"speaker": self.speaker.value, "text": self.text, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DialogueTurn":
        return cls(Speaker(d["speaker"]), d["text"], TurnKind(d["kind"]))


@dataclass(frozen=True)
class ErrorInjection:
    error_type: ErrorType
    position: int
    error_text: str
    correction_text: str
    # Redundant only: position of the parameter whose question is repeated.
    source_position: int | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "error_type": self.error_type.value,
            "position": self.position,
            "error_text": self.error_text,
            "correction_text": self.correction_text,
        }
        if self.source_position is not None:
            d["source_position"] = self.source_position
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ErrorInjection":
        return cls(
            ErrorType(d["error_type"]),
            int(d["position"]),
            d["error_text"],
            d["correction_text"],
            d.get("source_position"),
        )


@dataclass(frozen=True)
class DialogueRecord:
    record_id: str
    source: DegradedRecord
    turns: tuple[DialogueTurn, ...]
    injection: ErrorInjection | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "source": self.source.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "injection": self.injection.to_dict() if self.injection else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DialogueRecord":
        inj = d.get("injection")
        return cls(
            record_id=str(d["record_id"]),
            source=DegradedRecord.from_dict(d["source"]),
            turns=tuple(DialogueTurn.from_dict(t) for t in d["turns"]),
            injection=ErrorInjection.from_dict(inj) if inj else None,
        )


@dataclass
class AugmentationStats:
    counts: dict[str, int] = field(default_factory=lambda: {t.value: 0 for t in ErrorType})

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, error_type: ErrorType) -> None:
        self.counts[error_type.value] += 1

    def to_dict(self) -> dict[str, Any]:
        return {"counts": dict(self.counts), "total": self.total}


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    invariant: str
    location: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.invariant} @ {self.location}: {self.detail}"


def _check_solution(solution: SolutionPath, out: list[Violation]) -> None:
    if not solution.calls:
        out.append(Violation("SolutionPath.non_empty", "solution"))
    for ci, call in enumerate(solution.calls):
        if not call.api_name:
            out.append(Violation("ToolCall.api_name", f"solution[{ci}]", "empty api_name"))
        dupes = [n for n, c in Counter(call.names).items() if c > 1]
        if dupes:
            out.append(
                Violation("ToolCall.unique_params", f"solution[{ci}]", f"duplicates {dupes}")
            )


def validate_degraded(record: DegradedRecord) -> list[Violation]:
    out: list[Violation] = []
    _check_solution(record.solution, out)
    ki = record.key_info
    if [e.api_name for e in ki.entries] != record.solution.api_names:
        out.append(Violation("KeyInfo.mirrors_solution", "key_info", "API list differs"))
        return out
    for e, call in zip(ki.entries, record.solution.calls):
        if [n for n, _ in e.parameters] != call.names:
            out.append(
                Violation("KeyInfo.mirrors_solution", f"key_info[{e.api_name}]", "params differ")
            )
            return out
    expected = [p for _, _, p in parameter_positions(record.solution)]
    got = [s.position for e in ki.entries for _, s in e.parameters]
    if got != expected:
        out.append(Violation("KeyInfo.positions", "key_info", f"{got} != {expected}"))
    for ref in ki.params():
        loc = f"key_info[{ref.api_name}].{ref.name}"
        gold = record.solution.calls[ref.call_index].value(ref.name)
        if ref.spec.original != gold:
            out.append(Violation("ParameterSpec.original_matches_solution", loc))
        if not ref.spec.removed and ref.spec.current != ref.spec.original:
            out.append(
                Violation("ParameterSpec.consistency", loc, "removed=false but current != original")
            )
    removed = [(r.call_index, r.name) for r in ki.removed()]
    if level_for(removed) is not record.complexity_level:
        out.append(
            Violation(
                "DegradedRecord.complexity_level",
                "complexity_level",
                f"stored {record.complexity_level.value}, implied {level_for(removed).value}",
            )
        )
    return out


def validate_record(record: DialogueRecord) -> list[Violation]:
    """Check every data-model invariant; violations are returned, not raised."""
    from .protocol import NoJsonFound, SchemaMismatch, extract_solution

    out = validate_degraded(record.source)
    for i, t in enumerate(record.turns):
        if t.kind in ASSISTANT_ONLY_KINDS and t.speaker is not Speaker.ASSISTANT:
            out.append(Violation("DialogueTurn.kind_speaker", f"turns[{i}]", t.kind.value))
        if t.kind in USER_ONLY_KINDS and t.speaker is not Speaker.USER:
            out.append(Violation("DialogueTurn.kind_speaker", f"turns[{i}]", t.kind.value))
        if t.speaker is not Speaker.ASSISTANT and (SOE in t.text or EOE in t.text):
            out.append(Violation("Markers.assistant_only", f"turns[{i}]"))

    last = [i for i, t in enumerate(record.turns) if t.speaker is Speaker.ASSISTANT]
    if not last or record.turns[last[-1]].kind is not TurnKind.SUMMARY:
        out.append(Violation("DialogueRecord.final_summary", "turns[-1]", "no final Summary"))
    else:
        try:
            got = extract_solution(record.turns[last[-1]].text)
        except (NoJsonFound, SchemaMismatch) as exc:
            out.append(Violation("DialogueRecord.final_summary", f"turns[{last[-1]}]", str(exc)))
        else:
            if got != record.source.solution:
                out.append(
                    Violation(
                        "DialogueRecord.final_summary",
                        f"turns[{last[-1]}]",
                        "summary solution differs from source",
                    )
                )

    assistant_text = " ".join(t.text for t in record.turns if t.speaker is Speaker.ASSISTANT)
    n_soe, n_eoe = assistant_text.count(SOE), assistant_text.count(EOE)
    inj = record.injection
    if inj is None:
        if n_soe or n_eoe:
            out.append(Violation("Injection.markers", "turns", "markers without injection"))
    else:
        if not inj.error_text:
            out.append(Violation("ErrorInjection.error_text", "injection", "empty"))
        start, end = assistant_text.find(SOE), assistant_text.find(EOE)
        if n_soe != 1 or n_eoe != 1 or end < start:
            out.append(
                Violation("Injection.single_segment", "turns", f"{n_soe} SOE / {n_eoe} EOE")
            )
        else:
            segment = assistant_text[start : end + len(EOE)]
            if inj.error_text not in segment:
                out.append(Violation("Injection.error_text_wrapped", "turns"))
            rest = assistant_text[end + len(EOE) :].lstrip()
            if not rest.startswith(inj.correction_text):
                out.append(Violation("Injection.correction_adjacent", "turns"))
    return out

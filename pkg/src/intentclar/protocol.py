"""Parsing of assistant turns written in the bracketed section protocol.

Sections are introduced by ``[TASK DECOMPOSITION]``, ``[PARAMETER EVALUATION]``,
``[QUESTION]`` and ``[SUMMARY]``. Markers match case-sensitively; whitespace
inside the brackets and between words is tolerated.

Solution extraction rule: after the first ``[SUMMARY]`` marker, try each ``[``
in order; the first candidate whose bracket-balanced slice (string-literal
aware, no comments) decodes as a JSON array is the solution.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from .model import EOE, SOE, SolutionPath, ToolCall


class NoJsonFound(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class EventKind(str, Enum):
    DECOMPOSITION = "Decomposition"
    PARAM_EVALUATION = "ParamEvaluation"
    QUESTION = "Question"
    SUMMARY = "Summary"
    FREEFORM = "Freeform"


_MARKER_KINDS = {
    "TASK DECOMPOSITION": EventKind.DECOMPOSITION,
    "PARAMETER EVALUATION": EventKind.PARAM_EVALUATION,
    "QUESTION": EventKind.QUESTION,
    "SUMMARY": EventKind.SUMMARY,
}

MARKER_RE = re.compile(
    r"\[\s*(TASK\s+DECOMPOSITION|PARAMETER\s+EVALUATION|QUESTION|SUMMARY)\s*\]"
)
_ERROR_SEGMENT_RE = re.compile(re.escape(SOE) + r".*?" + re.escape(EOE), re.DOTALL)


@dataclass(frozen=True)
class AssistantEvent:
    kind: EventKind
    text: str
    source_span: tuple[int, int]
    solution: SolutionPath | None = None
    # True for a Summary whose JSON could not be extracted.
    parse_failed: bool = False
    # True for Freeform events covering an <SOE>...<EOE> segment.
    error_segment: bool = False


def _byte_offsets(text: str) -> list[int]:
    offsets = [0]
    for ch in text:
        offsets.append(offsets[-1] + len(ch.encode("utf-8")))
    return offsets


def parse_turn(text: str) -> list[AssistantEvent]:
    """Split one assistant turn into ordered events.

    Spans are UTF-8 byte offsets and tile the raw turn exactly. Marker pairs
    leaked into a live model's output become Freeform events flagged
    ``error_segment``; any section markers inside them are ignored.
    """
    boundaries: list[tuple[int, EventKind | None, int, bool]] = []
    errors = [(m.start(), m.end()) for m in _ERROR_SEGMENT_RE.finditer(text)]
    for s, e in errors:
        boundaries.append((s, EventKind.FREEFORM, e, True))
    for m in MARKER_RE.finditer(text):
        if any(s <= m.start() < e for s, e in errors):
            continue
        name = " ".join(m.group(1).split())
        boundaries.append((m.start(), _MARKER_KINDS[name], m.end(), False))
    boundaries.sort()

    offs = _byte_offsets(text)
    events: list[AssistantEvent] = []
    if not boundaries or boundaries[0][0] > 0:
        end = boundaries[0][0] if boundaries else len(text)
        events.append(
            AssistantEvent(EventKind.FREEFORM, text[:end].strip(), (0, offs[end]))
        )
    for i, (start, kind, body_start, is_err) in enumerate(boundaries):
        end = boundaries[i + 1][0] if i + 1 < len(boundaries) else len(text)
        span = (offs[start], offs[end])
        if is_err:
            # the error segment itself, then any trailing text up to the next marker
            events.append(
                AssistantEvent(
                    EventKind.FREEFORM, text[start:body_start], (offs[start], offs[body_start]),
                    error_segment=True,
                )
            )
            if body_start < end:
                events.append(
                    AssistantEvent(
                        EventKind.FREEFORM,
                        text[body_start:end].strip(),
                        (offs[body_start], offs[end]),
                    )
                )
            continue
        payload = text[body_start:end].strip()
        if kind is EventKind.SUMMARY:
            try:
                sol = _solution_from(text[body_start:end])
            except (NoJsonFound, SchemaMismatch):
                events.append(AssistantEvent(kind, payload, span, None, parse_failed=True))
            else:
                events.append(AssistantEvent(kind, payload, span, sol))
        else:
            events.append(AssistantEvent(kind, payload, span))
    return [e for e in events if e.source_span[0] < e.source_span[1]]


def strip_error_segments(text: str) -> str:
    return _ERROR_SEGMENT_RE.sub("", text)


def has_error_markers(text: str) -> bool:
    return SOE in text or EOE in text


def first_json_array(text: str) -> list:
    """Return the first bracket-balanced ``[...]`` in ``text`` that decodes as JSON."""
    idx = text.find("[")
    while idx != -1:
        end = _balanced_end(text, idx)
        if end is not None:
            try:
                value = json.loads(text[idx:end])
            except json.JSONDecodeError:
                pass
            else:
                if isinstance(value, list):
                    return value
        idx = text.find("[", idx + 1)
    raise NoJsonFound("no balanced JSON array found")


def _balanced_end(text: str, start: int) -> int | None:
    depth = 0
    in_str = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return i + 1 if ch == "]" else None
            if depth < 0:
                return None
    return None


def _as_str(value) -> str:
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)


def _solution_from(segment: str) -> SolutionPath:
    items = first_json_array(segment)
    if not items:
        raise SchemaMismatch("solution array is empty")
    calls = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not isinstance(item.get("task"), str):
            raise SchemaMismatch(f"item {i} lacks a string 'task'")
        params = item.get("arguments", item.get("parameters"))
        if params is None:
            params = []
        if not isinstance(params, list):
            raise SchemaMismatch(f"item {i}: parameters must be a list")
        pairs = []
        for p in params:
            if not isinstance(p, dict) or "name" not in p or "value" not in p:
                raise SchemaMismatch(f"item {i}: parameter entries need name/value")
            pairs.append((_as_str(p["name"]), _as_str(p["value"])))
        calls.append(ToolCall(item["task"], tuple(pairs)))
    return SolutionPath(tuple(calls))


def extract_solution(text: str) -> SolutionPath:
    """Parse the solution path that follows the first ``[SUMMARY]`` marker.

    Accepts both ``arguments`` and ``parameters`` spellings.
    """
    clean = strip_error_segments(text)
    for m in MARKER_RE.finditer(clean):
        if m.group(1) == "SUMMARY":
            return _solution_from(clean[m.end():])
    raise NoJsonFound("no [SUMMARY] section")

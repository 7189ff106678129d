"""Training-sample emission with selective loss masking.

Each sample lists chat messages and, per message, the half-open UTF-8 byte
ranges that are TRAINABLE. Assistant text outside ``<SOE>...<EOE>`` (markers
included) is trainable; user and system text never is.

Consecutive turns by the same speaker are joined with one space into a single
message so that the sample alternates roles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .model import EOE, SOE, DialogueRecord, Speaker
from .util import dumps

SPECIAL_TOKENS = (SOE, EOE)
_ROLE = {Speaker.SYSTEM: "system", Speaker.USER: "user", Speaker.ASSISTANT: "assistant"}


class UnbalancedMarkers(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSample:
    record_id: str
    messages: tuple[tuple[str, str], ...]
    loss_spans: tuple[tuple[tuple[int, int], ...], ...]
    special_tokens: tuple[str, str] = SPECIAL_TOKENS

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "loss_spans": [[list(s) for s in spans] for spans in self.loss_spans],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSample":
        return cls(
            d["record_id"],
            tuple((m["role"], m["content"]) for m in d["messages"]),
            tuple(tuple((int(a), int(b)) for a, b in spans) for spans in d["loss_spans"]),
        )

    def trainable_text(self) -> str:
        out = []
        for (_, content), spans in zip(self.messages, self.loss_spans):
            raw = content.encode("utf-8")
            out += [raw[a:b].decode("utf-8") for a, b in spans]
        return "".join(out)


def extract_error_spans(text: str) -> list[tuple[int, int]]:
    """Byte spans of every ``<SOE>...<EOE>`` pair, markers included."""
    raw = text.encode("utf-8")
    soe, eoe = SOE.encode(), EOE.encode()
    spans = []
    i = 0
    open_at = None
    while i < len(raw):
        if raw.startswith(soe, i):
            if open_at is not None:
                raise UnbalancedMarkers(f"nested {SOE} at byte {i}")
            open_at = i
            i += len(soe)
        elif raw.startswith(eoe, i):
            if open_at is None:
                raise UnbalancedMarkers(f"orphan {EOE} at byte {i}")
            spans.append((open_at, i + len(eoe)))
            open_at = None
            i += len(eoe)
        else:
            i += 1
    if open_at is not None:
        raise UnbalancedMarkers(f"unclosed {SOE} at byte {open_at}")
    return spans


def _complement(length: int, masked: list[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    spans = []
    cursor = 0
    for a, b in masked:
        if a > cursor:
            spans.append((cursor, a))
        cursor = b
    if cursor < length:
        spans.append((cursor, length))
    return tuple(spans)


def flatten(dialogue: DialogueRecord) -> list[tuple[str, str]]:
    messages: list[tuple[str, str]] = []
    for turn in dialogue.turns:
        role = _ROLE[turn.speaker]
        if messages and messages[-1][0] == role:
            messages[-1] = (role, messages[-1][1] + " " + turn.text)
        else:
            messages.append((role, turn.text))
    return messages


def emit(dialogue: DialogueRecord) -> TrainingSample:
    messages = flatten(dialogue)
    spans = []
    for role, content in messages:
        if role != "assistant":
            if SOE in content or EOE in content:
                raise UnbalancedMarkers(f"markers in a {role} message")
            spans.append(())
            continue
        spans.append(_complement(len(content.encode("utf-8")), extract_error_spans(content)))
    return TrainingSample(dialogue.record_id, tuple(messages), tuple(spans))


def export(samples: Iterable[TrainingSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(dumps(s.to_dict()) + "\n")


def load(path: str | Path) -> list[TrainingSample]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingSample.from_dict(json.loads(l)) for l in fh if l.strip()]

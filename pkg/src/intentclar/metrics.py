"""Clarification and tool-invocation metrics.

ICR, CE are micro-averaged over intents and questions; TSS, PRS are F1
scores averaged per session (switchable to micro). CPS is the harmonic
mean of ICR and CE.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Hashable, Iterable

METRICS = ("icr", "ce", "cps", "ir", "scr", "tss", "prs")


class EmptyInput(ValueError):
    pass


def f1_sets(predicted: Iterable[Hashable], gold: Iterable[Hashable]) -> float:
    """Micro F1 with multiset intersection as true positives.

    Empty vs empty is 1.0; empty vs non-empty is 0.0.
    """
    p, g = Counter(predicted), Counter(gold)
    if not p and not g:
        return 1.0
    tp = sum((p & g).values())
    fp = sum(p.values()) - tp
    fn = sum(g.values()) - tp
    return 2 * tp / (2 * tp + fp + fn)


def _f1_counts(predicted: Iterable[Hashable], gold: Iterable[Hashable]) -> tuple[int, int, int]:
    p, g = Counter(predicted), Counter(gold)
    tp = sum((p & g).values())
    return tp, sum(p.values()) - tp, sum(g.values()) - tp


_WS = re.compile(r"\s+")


def normalize_value(value: str) -> str:
    return _WS.sub(" ", value.strip()).casefold()


def harmonic(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


@dataclass
class SessionTally:
    record_id: str
    level: int
    clarified_count: int
    unspecified_count: int
    questions_asked: int
    solution_present: bool
    predicted_apis: list[str] = field(default_factory=list)
    gold_apis: list[str] = field(default_factory=list)
    predicted_triples: list[tuple[str, str, str]] = field(default_factory=list)
    gold_triples: list[tuple[str, str, str]] = field(default_factory=list)
    termination: str = ""

    @property
    def rounds(self) -> int:
        return self.questions_asked

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["predicted_triples"] = [list(t) for t in self.predicted_triples]
        d["gold_triples"] = [list(t) for t in self.gold_triples]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SessionTally":
        d = dict(d)
        d["predicted_triples"] = [tuple(t) for t in d.get("predicted_triples", [])]
        d["gold_triples"] = [tuple(t) for t in d.get("gold_triples", [])]
        return cls(**d)


@dataclass
class MetricsReport:
    icr: float
    ce: float
    cps: float
    ir: float
    scr: float
    tss: float
    prs: float
    sessions: int
    by_level: dict[int, "MetricsReport"] = field(default_factory=dict)
    header: dict[str, str] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.values(),
            "sessions": self.sessions,
            "header": dict(self.header),
            "by_level": {str(k): v.to_dict() for k, v in sorted(self.by_level.items())},
        }


def aggregate_values(
    clarified: int,
    unspecified: int,
    questions: int,
    *,
    ir: float = 0.0,
    scr: float = 0.0,
    tss: float = 0.0,
    prs: float = 0.0,
    sessions: int = 0,
) -> MetricsReport:
    icr = clarified / unspecified if unspecified else 1.0
    if questions:
        ce = min(1.0, clarified / questions)
    else:
        ce = 1.0 if unspecified == 0 else 0.0
    return MetricsReport(icr, ce, harmonic(icr, ce), ir, scr, tss, prs, sessions)


def _one(tallies: list[SessionTally], tss_mode: str, prs_mode: str) -> MetricsReport:
    n = len(tallies)

    def f1_stat(mode: str, pred: str, gold: str) -> float:
        if mode == "micro":
            tp = fp = fn = 0
            for t in tallies:
                p = getattr(t, pred) if t.solution_present else []
                a, b, c = _f1_counts(p, getattr(t, gold))
                tp, fp, fn = tp + a, fp + b, fn + c
            return 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        return sum(
            f1_sets(getattr(t, pred), getattr(t, gold)) if t.solution_present else 0.0
            for t in tallies
        ) / n

    return aggregate_values(
        sum(t.clarified_count for t in tallies),
        sum(t.unspecified_count for t in tallies),
        sum(t.questions_asked for t in tallies),
        ir=sum(t.questions_asked for t in tallies) / n,
        scr=sum(t.solution_present for t in tallies) / n,
        tss=f1_stat(tss_mode, "predicted_apis", "gold_apis"),
        prs=f1_stat(prs_mode, "predicted_triples", "gold_triples"),
        sessions=n,
    )


def aggregate(
    tallies: list[SessionTally], tss_mode: str = "macro", prs_mode: str = "macro"
) -> MetricsReport:
    if not tallies:
        raise EmptyInput("aggregate needs at least one session")
    for mode in (tss_mode, prs_mode):
        if mode not in ("macro", "micro"):
            raise ValueError(f"unknown aggregation mode {mode!r}")
    report = _one(tallies, tss_mode, prs_mode)
    levels = sorted({t.level for t in tallies})
    report.by_level = {
        lv: _one([t for t in tallies if t.level == lv], tss_mode, prs_mode) for lv in levels
    }
    report.header = {
        "icr": "micro", "ce": "micro", "tss": tss_mode, "prs": prs_mode,
        "ir": "mean questions per session", "scr": "fraction summarized",
    }
    return report


def format_table(report: MetricsReport) -> str:
    """Grid with one row per level plus overall; rates shown x100."""
    cols = ("ICR", "CE", "CPS", "IR", "SCR", "TSS", "PRS")
    lines = [f"{'Level':<10}" + "".join(f"{c:>9}" for c in cols)]

    def row(name: str, r: MetricsReport) -> str:
        vals = [r.icr * 100, r.ce * 100, r.cps * 100, r.ir, r.scr * 100, r.tss * 100, r.prs * 100]
        return f"{name:<10}" + "".join(f"{v:>9.2f}" for v in vals)

    roman = {1: "I", 2: "II", 3: "III"}
    for lv, r in sorted(report.by_level.items()):
        lines.append(row(f"Level {roman.get(lv, lv)}", r))
    lines.append(row("Overall", report))
    return "\n".join(lines)

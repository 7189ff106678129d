"""Unspecified-query generation: stratified removal sampling, LLM-driven
removal/abstraction, and the quality gate."""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .gateway import Gateway
from .model import (
    LEVEL_ORDER,
    ComplexityLevel,
    DegradedRecord,
    KeyInfo,
    ParameterSpec,
    SolutionPath,
    level_for,
)
from .resources import prompt
from .util import MalformedModelJson, as_rng, ask_json

Slot = tuple[int, str]  # (call_index, parameter name)


class PlanViolation(ValueError):
    """The model touched a parameter outside the removal plan."""


@dataclass(frozen=True)
class RemovalPlan:
    targets: frozenset[Slot]
    level: ComplexityLevel

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", frozenset(self.targets))
        if level_for(sorted(self.targets)) is not self.level:
            raise ValueError(f"targets {sorted(self.targets)} do not match {self.level.value}")


@dataclass(frozen=True)
class SamplerConfig:
    # FullySpecified, SingleApiSingleParam, SingleApiMultiParam, MultiApiMultiParam
    level_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    multi_param_count_range: tuple[int, int] = (2, 3)

    def __post_init__(self) -> None:
        w = tuple(float(x) for x in self.level_weights)
        if len(w) != 4 or any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError("level_weights must be 4 non-negative reals with positive sum")
        object.__setattr__(self, "level_weights", tuple(x / sum(w) for x in w))
        lo, hi = self.multi_param_count_range
        if lo < 2 or hi < lo:
            raise ValueError("multi_param_count_range needs 2 <= min <= max")
        object.__setattr__(self, "multi_param_count_range", (int(lo), int(hi)))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplerConfig":
        return cls(
            tuple(d.get("level_weights", cls.level_weights)),
            tuple(d.get("multi_param_count_range", cls.multi_param_count_range)),
        )


def _feasible(level: ComplexityLevel, solution: SolutionPath) -> bool:
    sizes = [len(c.parameters) for c in solution.calls]
    if level is ComplexityLevel.FULLY_SPECIFIED:
        return True
    if level is ComplexityLevel.SINGLE_API_SINGLE_PARAM:
        return sum(sizes) >= 1
    if level is ComplexityLevel.SINGLE_API_MULTI_PARAM:
        return any(s >= 2 for s in sizes)
    return sum(1 for s in sizes if s >= 1) >= 2


def sample_removal_plan(
    solution: SolutionPath, config: SamplerConfig, seed: int | random.Random
) -> RemovalPlan:
    """Draw a complexity level, then the parameters to remove.

    Infeasible levels fall back MultiApiMulti -> SingleApiMulti ->
    SingleApiSingle -> FullySpecified.
    """
    if not solution.calls:
        raise ValueError("solution must be non-empty")
    rng = as_rng(seed)
    level = rng.choices(LEVEL_ORDER, weights=config.level_weights)[0]
    idx = LEVEL_ORDER.index(level)
    while not _feasible(LEVEL_ORDER[idx], solution):
        idx -= 1
    level = LEVEL_ORDER[idx]

    slots = [(ci, n) for ci, c in enumerate(solution.calls) for n in c.names]
    lo, hi = config.multi_param_count_range
    if level is ComplexityLevel.FULLY_SPECIFIED:
        targets: list[Slot] = []
    elif level is ComplexityLevel.SINGLE_API_SINGLE_PARAM:
        targets = [rng.choice(slots)]
    elif level is ComplexityLevel.SINGLE_API_MULTI_PARAM:
        ci = rng.choice([i for i, c in enumerate(solution.calls) if len(c.parameters) >= 2])
        names = solution.calls[ci].names
        k = rng.randint(lo, max(lo, min(hi, len(names))))
        targets = [(ci, n) for n in rng.sample(names, min(k, len(names)))]
    else:
        k = rng.randint(lo, max(lo, min(hi, len(slots))))
        k = min(k, len(slots))
        # uniform subsets, rejected until they span at least two calls
        while True:
            targets = rng.sample(slots, k)
            if len({ci for ci, _ in targets}) >= 2:
                break
    return RemovalPlan(frozenset(targets), level)


# --------------------------------------------------------------------------
# removal via the model


def _prompt_key_info(solution: SolutionPath, plan: RemovalPlan) -> dict[str, Any]:
    ki = KeyInfo.from_solution(solution, set(plan.targets))
    return {
        k: {"parameters": {n: {"removed": s.removed, "original": s.original} for n, s in e.parameters}}
        for k, e in zip(ki.to_dict().keys(), ki.entries)
    }


def degrade_query(
    query: str,
    solution: SolutionPath,
    plan: RemovalPlan,
    gateway: Gateway | None,
    record_id: str = "",
    relevant_apis: tuple[str, ...] | None = None,
    api_docs: dict[str, str] | None = None,
) -> DegradedRecord:
    names = {(ci, n) for ci, c in enumerate(solution.calls) for n in c.names}
    if not plan.targets <= names:
        raise ValueError(f"plan targets {sorted(plan.targets - names)} are not in the solution")

    base = KeyInfo.from_solution(solution, set(plan.targets))
    common = dict(
        record_id=record_id,
        original_query=query,
        solution=solution,
        complexity_level=plan.level,
        relevant_apis=relevant_apis,
        api_docs=dict(api_docs or {}),
    )
    if not plan.targets:
        return DegradedRecord(unspecified_query=query, key_info=base, **common)
    if gateway is None:
        raise ValueError("a gateway is needed for non-empty plans")

    keys = list(base.to_dict().keys())

    def check(reply: dict[str, Any]) -> tuple[str, KeyInfo]:
        q2 = reply.get("unspecified_query")
        block = reply.get("key_info")
        if not isinstance(q2, str) or not isinstance(block, dict):
            raise MalformedModelJson("reply needs string 'unspecified_query' and object 'key_info'")
        ki = base
        for key, entry in zip(keys, base.entries):
            params = (block.get(key) or {}).get("parameters")
            if not isinstance(params, dict):
                raise MalformedModelJson(f"key_info[{key!r}].parameters missing")
            for name, spec in entry.parameters:
                got = params.get(name)
                if not isinstance(got, dict) or not isinstance(got.get("removed"), bool):
                    raise MalformedModelJson(f"{key}.{name}: missing boolean 'removed'")
                if got["removed"] != spec.removed:
                    raise PlanViolation(f"{key}.{name}: removed flag changed")
                if not spec.removed:
                    for fld in ("original", "current"):
                        if fld in got and got[fld] != spec.original:
                            raise PlanViolation(f"{key}.{name}: retained value altered")
                    continue
                current = got.get("current")
                if current is None:
                    current = ""
                if not isinstance(current, str):
                    raise MalformedModelJson(f"{key}.{name}: 'current' must be a string")
                ki = ki.with_param(
                    entry.call_index, name,
                    ParameterSpec(True, spec.original, current, spec.position),
                )
        return q2, ki

    payload = {"original_query": query, "key_info": _prompt_key_info(solution, plan)}
    q2, ki = ask_json(gateway, prompt("degrade"), payload, check)
    return DegradedRecord(unspecified_query=q2, key_info=ki, **common)


# --------------------------------------------------------------------------
# similarity and quality control


class SimilarityKind(str, Enum):
    EMBEDDING_ENDPOINT = "EmbeddingEndpoint"
    TOKEN_OVERLAP = "TokenOverlap"


@dataclass(frozen=True)
class SimilarityProviderConfig:
    kind: SimilarityKind = SimilarityKind.TOKEN_OVERLAP
    endpoint: str | None = None
    threshold: float = 0.85
    model: str | None = None
    gateway: Gateway | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SimilarityKind(self.kind))
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict[str, Any], gateway: Gateway | None = None) -> "SimilarityProviderConfig":
        return cls(
            d.get("kind", SimilarityKind.TOKEN_OVERLAP),
            d.get("endpoint"),
            float(d.get("threshold", 0.85)),
            d.get("model"),
            gateway,
        )


_WORD_RE = re.compile(r"\w+", re.UNICODE)


def word_set(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


def similarity(a: str, b: str, provider: SimilarityProviderConfig | None = None) -> float:
    provider = provider or SimilarityProviderConfig()
    if provider.kind is SimilarityKind.TOKEN_OVERLAP:
        wa, wb = word_set(a), word_set(b)
        if not wa and not wb:
            return 1.0 if a == b else 0.0
        return len(wa & wb) / len(wa | wb)
    if a == b and a:
        return 1.0
    if not provider.endpoint:
        raise ValueError("EmbeddingEndpoint similarity needs an endpoint")
    gw = provider.gateway or Gateway()
    va, vb = gw.embed([a, b], provider.endpoint, provider.model)
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(x * x for x in vb))
    if na == 0 or nb == 0:
        return 0.0
    cos = sum(x * y for x, y in zip(va, vb)) / (na * nb)
    return min(1.0, max(0.0, (1.0 + cos) / 2.0))


class GateReason(str, Enum):
    TOO_SIMILAR = "TooSimilar"
    LEAKED_VALUE = "LeakedValue"
    DROPPED_VALUE = "DroppedValue"


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    reason: GateReason | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = GateResult(True)


def quality_gate(record: DegradedRecord, provider: SimilarityProviderConfig | None = None) -> GateResult:
    """Accept or reject a degraded record.

    Similarity fires only strictly above the threshold. Verbatim checks are
    case-insensitive substring scans of the unspecified query.
    """
    provider = provider or SimilarityProviderConfig()
    q2 = record.unspecified_query.lower()
    removed = record.key_info.removed()
    for ref in removed:
        score = similarity(ref.spec.original, ref.spec.current, provider)
        if score > provider.threshold:
            return GateResult(
                False, GateReason.TOO_SIMILAR,
                f"{ref.api_name}.{ref.name}: similarity {score:.4f} > {provider.threshold}",
            )
    for ref in removed:
        if ref.spec.original and ref.spec.original.lower() in q2:
            return GateResult(False, GateReason.LEAKED_VALUE, f"{ref.api_name}.{ref.name}: {ref.spec.original!r}")
    q = record.original_query.lower()
    for ref in record.key_info.specified():
        v = ref.spec.original.lower()
        if v and v in q and v not in q2:
            return GateResult(False, GateReason.DROPPED_VALUE, f"{ref.api_name}.{ref.name}: {ref.spec.original!r}")
    return ACCEPT

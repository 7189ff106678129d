"""Reference bundle: five seed records, scripted model outputs, mock table and
per-stage goldens.

Bundle layout (``data/bundle``)::

    seed_records.jsonl     source records with pinned removal plans
    config.json            pipeline config (Mock mode, seed)
    fixture_script.json    model outputs per record, used only to regenerate
    mock_responses.json    prompt digest -> response text
    distractor_apis.json   API pool for Level II menus
    goldens/               expected stage outputs, manifest, oracle metrics

The mock table is produced by running the pipeline in Live mode against a
scripted responder that answers every prompt kind from ``fixture_script.json``
(with generic fallbacks), then recording each exchange.
"""

from __future__ import annotations

import json
import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gateway import ChatRequest, Gateway, GatewayConfig, Mode, prompt_digest, record_transport
from .harness import OracleAssistant, evaluate_records, load_eval_records
from .inject import SEMANTIC_TYPES, choose_pos_ordinal, semantic_request
from .metrics import aggregate
from .model import DialogueRecord, ErrorType
from .pipeline import STAGE_FILES, load_config, run_pipeline
from .resources import data_path, prompt
from .util import read_jsonl

log = logging.getLogger(__name__)

GOLDEN_FILES = (
    "degraded.jsonl",
    "rejects.jsonl",
    "dialogues.jsonl",
    "augmented.jsonl",
    "augmentation_stats.json",
    "samples.jsonl",
    "manifest.json",
)
ORACLE_METRICS = "oracle_level1.json"


def bundle_dir() -> Path:
    return data_path("bundle")


@dataclass(frozen=True)
class FixtureBundle:
    root: Path = field(default_factory=bundle_dir)

    @property
    def seed_records(self) -> Path:
        return self.root / "seed_records.jsonl"

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def script_path(self) -> Path:
        return self.root / "fixture_script.json"

    @property
    def mock_table(self) -> Path:
        return self.root / "mock_responses.json"

    @property
    def distractors(self) -> Path:
        return self.root / "distractor_apis.json"

    @property
    def goldens(self) -> Path:
        return self.root / "goldens"

    def config(self, **overrides: Any) -> dict[str, Any]:
        return load_config(self.config_path, overrides or None)

    @property
    def seed(self) -> int:
        return int(self.config().get("seed", 0))

    def script(self) -> dict[str, Any]:
        return json.loads(self.script_path.read_text("utf-8"))


# --------------------------------------------------------------------------
# scripted responder


_SEMANTIC_PROMPTS = {
    ErrorType.CLEARLY_STATED: "error_clearly_stated",
    ErrorType.IMPRECISE: "error_imprecise",
    ErrorType.IRRELEVANT: "error_irrelevant",
}
_SEMANTIC_FIELDS = {
    ErrorType.CLEARLY_STATED: "question",
    ErrorType.IMPRECISE: "imprecise_question",
    ErrorType.IRRELEVANT: "irrelevant_question",
}


def _spaced(name: str) -> str:
    return name.replace("_", " ")


def _generic_error(tau: ErrorType, api: str, name: str) -> str:
    if tau is ErrorType.CLEARLY_STATED:
        return f"Could you please tell me the {_spaced(name)} you would like to use for {_spaced(api)}?"
    if tau is ErrorType.IMPRECISE:
        return "Could you tell me a bit more about what you have in mind?"
    return "Do you have a preferred time of day for this?"


class ScriptedResponder:
    """Deterministic stand-in for the generation model.

    Recognizes each pipeline prompt by its system text and answers from the
    fixture script, keyed by record. Records absent from the script get
    generic, rule-made answers.
    """

    def __init__(self, script: dict[str, Any], records: list[dict[str, Any]]):
        self.script = script
        self.by_query: dict[str, dict[str, Any]] = {}
        for row in records:
            entry = script.get(row["record_id"], {})
            self.by_query[row["query"]] = entry
            self.by_query[entry.get("unspecified_query", row["query"])] = entry

    def _kind(self, system: str) -> tuple[str, ErrorType | None]:
        for name in ("degrade", "decompose", "questions"):
            if system == prompt(name):
                return name, None
        for tau, name in _SEMANTIC_PROMPTS.items():
            head, _, tail = prompt(name).partition("{choose_pos}")
            if system.startswith(head) and system.endswith(tail):
                return "semantic", tau
        raise ValueError("unrecognised system prompt")

    def __call__(self, request: ChatRequest) -> str:
        kind, tau = self._kind(request.system_prompt)
        payload = json.loads(request.messages[0][1])
        if kind == "degrade":
            reply = self._degrade(payload)
        elif kind == "decompose":
            reply = self._decompose(payload)
        elif kind == "questions":
            reply = self._questions(payload)
        else:
            reply = self._semantic(payload, tau)
        return json.dumps(reply, ensure_ascii=False, indent=2)

    def _degrade(self, payload: dict[str, Any]) -> dict[str, Any]:
        query = payload["original_query"]
        entry = self.by_query.get(query, {})
        currents = entry.get("current", {})
        q2 = query
        block: dict[str, Any] = {}
        for key, e in payload["key_info"].items():
            params = {}
            for name, spec in e["parameters"].items():
                out = dict(spec)
                if spec["removed"]:
                    api = key.split("#")[0]
                    cur = currents.get(f"{api}.{name}", f"a certain {_spaced(name)}")
                    out["current"] = cur
                    if "unspecified_query" not in entry:
                        q2 = q2.replace(spec["original"], cur)
                else:
                    out["current"] = spec["original"]
                params[name] = out
            block[key] = {"parameters": params}
        return {"unspecified_query": entry.get("unspecified_query", q2), "key_info": block}

    def _decompose(self, payload: dict[str, Any]) -> dict[str, Any]:
        entry = self.by_query.get(payload["Query"], {})
        steps = entry.get("tool_steps")
        if steps is None:
            steps = [
                f"Step {i}: Complete this part of the task using {api['name']}."
                for i, api in enumerate(payload["APIs"], 1)
            ]
        return {"tool_steps": steps}

    def _questions(self, payload: dict[str, Any]) -> dict[str, Any]:
        entry = self.by_query.get(payload["original_query"], {})
        qs = entry.get("questions", {})
        block = {}
        for key, e in payload["key_info"].items():
            api = key.split("#")[0]
            params = {}
            for name, spec in e["parameters"].items():
                out = dict(spec)
                if spec["removed"]:
                    out["question"] = qs.get(
                        f"{api}.{name}",
                        f"Could you please specify the {_spaced(name)} for {_spaced(api)}?",
                    )
                params[name] = out
            block[key] = {"parameters": params}
        return {"key_info": block}

    def _semantic(self, payload: dict[str, Any], tau: ErrorType) -> dict[str, Any]:
        entry = self.by_query.get(payload["original_query"], {})
        scripted = entry.get("errors", {}).get(tau.value, {})
        fld = _SEMANTIC_FIELDS[tau]
        block = {}
        for key, e in payload["key_info"].items():
            api = key.split("#")[0]
            params = {}
            for name, spec in e["parameters"].items():
                out = dict(spec)
                # ClearlyStated payloads arrive with flags already inverted
                if tau is ErrorType.IRRELEVANT or spec["removed"]:
                    out[fld] = scripted.get(f"{api}.{name}", _generic_error(tau, api, name))
                params[name] = out
            block[key] = {"parameters": params}
        return {"key_info": block}


# --------------------------------------------------------------------------
# building and checking the bundle


class _Recorder:
    def __init__(self, responder: ScriptedResponder):
        self.responder = responder
        self.table: dict[str, str] = {}

    def __call__(self, request: ChatRequest) -> str:
        text = self.responder(request)
        self.table[prompt_digest(request)] = text
        return text


def semantic_requests(dialogue: DialogueRecord) -> list[ChatRequest]:
    """Every semantic-error request the augmenter could issue for a dialogue."""
    gw = Gateway(GatewayConfig())
    out = []
    for p in dialogue.source.key_info.params():
        for tau in SEMANTIC_TYPES:
            if tau is ErrorType.CLEARLY_STATED and p.spec.removed:
                continue
            if tau is not ErrorType.CLEARLY_STATED and not p.spec.removed:
                continue
            choose_pos_ordinal(dialogue, tau, p.position)
            system, payload = semantic_request(dialogue, tau, p.position)
            out.append(gw.request(system, json.dumps(payload, ensure_ascii=False, indent=2)))
    return out


def build_mock_table(bundle: FixtureBundle | None = None) -> dict[str, str]:
    bundle = bundle or FixtureBundle()
    records = list(read_jsonl(bundle.seed_records))
    recorder = _Recorder(ScriptedResponder(bundle.script(), records))
    cfg = bundle.config()
    cfg["gateway"] = dict(cfg["gateway"], mode=Mode.LIVE.value, mock_table=None, cache_directory=None)
    gateway = Gateway(GatewayConfig.from_dict(cfg["gateway"]), transport=record_transport(recorder))
    with tempfile.TemporaryDirectory() as tmp:
        run_pipeline(["degrade", "build"], cfg, bundle.seed, tmp, bundle.seed_records, gateway)
        for row in read_jsonl(Path(tmp) / STAGE_FILES["build"]):
            for req in semantic_requests(DialogueRecord.from_dict(row)):
                recorder(req)
    return dict(sorted(recorder.table.items()))


def oracle_metrics(dialogues_path: Path, seed: int) -> dict[str, Any]:
    records = load_eval_records(dialogues_path)
    tallies, _ = evaluate_records(records, 1, OracleAssistant, seed=seed)
    return aggregate(tallies).to_dict()


def regenerate(bundle: FixtureBundle | None = None) -> list[Path]:
    """Rebuild the mock table and every golden. Overwrites bundle files."""
    bundle = bundle or FixtureBundle()
    table = build_mock_table(bundle)
    bundle.mock_table.write_text(json.dumps(table, indent=1, ensure_ascii=False) + "\n", "utf-8")
    bundle.goldens.mkdir(parents=True, exist_ok=True)
    written = [bundle.mock_table]
    with tempfile.TemporaryDirectory() as tmp:
        run_pipeline(
            ["degrade", "build", "augment", "emit-masks"], bundle.config(), bundle.seed, tmp,
            bundle.seed_records,
        )
        for name in GOLDEN_FILES:
            shutil.copyfile(Path(tmp) / name, bundle.goldens / name)
            written.append(bundle.goldens / name)
        metrics = oracle_metrics(Path(tmp) / STAGE_FILES["build"], bundle.seed)
    path = bundle.goldens / ORACLE_METRICS
    path.write_text(json.dumps(metrics, indent=2) + "\n", "utf-8")
    written.append(path)
    return written


@dataclass
class FileDiff:
    file: str
    offset: int | None
    detail: str

    def __str__(self) -> str:
        at = "" if self.offset is None else f" at byte {self.offset}"
        return f"{self.file}{at}: {self.detail}"


@dataclass
class VerifyReport:
    diffs: list[FileDiff]
    metrics: dict[str, Any]
    metric_failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.diffs and not self.metric_failures

    def summary(self) -> str:
        lines = [f"bundle verification: {'PASS' if self.ok else 'FAIL'}"]
        lines += [f"  diff {d}" for d in self.diffs]
        lines += [f"  metric {m}" for m in self.metric_failures]
        return "\n".join(lines)


def first_difference(a: bytes, b: bytes) -> int | None:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None if len(a) == len(b) else min(len(a), len(b))


def verify_bundle(goldens_dir: str | Path | None = None, bundle: FixtureBundle | None = None) -> VerifyReport:
    """Rerun the pipeline in Mock mode, diff every golden, and check that
    the oracle assistant scores perfectly at Level I."""
    bundle = bundle or FixtureBundle()
    goldens = Path(goldens_dir) if goldens_dir else bundle.goldens
    diffs: list[FileDiff] = []
    with tempfile.TemporaryDirectory() as tmp:
        run_pipeline(
            ["degrade", "build", "augment", "emit-masks"], bundle.config(), bundle.seed, tmp,
            bundle.seed_records,
        )
        for name in GOLDEN_FILES:
            want_path = goldens / name
            if not want_path.exists():
                diffs.append(FileDiff(name, None, "golden missing"))
                continue
            got, want = (Path(tmp) / name).read_bytes(), want_path.read_bytes()
            off = first_difference(got, want)
            if off is not None:
                diffs.append(FileDiff(name, off, "output differs from golden"))
        metrics = oracle_metrics(Path(tmp) / STAGE_FILES["build"], bundle.seed)
        removed = [len(r.key_info.removed()) for r in load_eval_records(Path(tmp) / STAGE_FILES["build"])]
    failures = []
    for m in ("icr", "ce", "cps", "scr", "tss", "prs"):
        if abs(metrics[m] - 1.0) > 1e-12:
            failures.append(f"{m} = {metrics[m]} (want 1.0)")
    want_ir = sum(removed) / len(removed)
    if abs(metrics["ir"] - want_ir) > 1e-12:
        failures.append(f"ir = {metrics['ir']} (want {want_ir})")
    golden_metrics = goldens / ORACLE_METRICS
    if golden_metrics.exists() and json.loads(golden_metrics.read_text("utf-8")) != metrics:
        failures.append(f"{ORACLE_METRICS} differs from recomputed metrics")
    return VerifyReport(diffs, metrics, failures)

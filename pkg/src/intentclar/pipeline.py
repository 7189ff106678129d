"""Stage wiring, layered configuration, run manifests and corpus statistics."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from . import __version__
from .degrade import (
    PlanViolation,
    RemovalPlan,
    SamplerConfig,
    SimilarityProviderConfig,
    degrade_query,
    quality_gate,
    sample_removal_plan,
)
from .dialogue import assemble_dialogue, decompose_task, generate_questions, load_tones
from .gateway import CacheMiss, Gateway, GatewayConfig, Mode, TransportError
from .inject import InjectionPolicy, augment_dialogue
from .masking import emit, export
from .model import (
    ERROR_TYPES,
    LEVEL_ORDER,
    AugmentationStats,
    DegradedRecord,
    DialogueRecord,
    SolutionPath,
    level_for,
    validate_record,
)
from .util import MalformedModelJson, derive_seed, dumps, file_digest, read_jsonl, rng_for, write_jsonl

log = logging.getLogger(__name__)

STAGES = ("degrade", "build", "augment", "emit-masks")
STAGE_FILES = {
    "degrade": "degraded.jsonl",
    "build": "dialogues.jsonl",
    "augment": "augmented.jsonl",
    "emit-masks": "samples.jsonl",
}
STAGE_INPUT = {"degrade": "input", "build": "degrade", "augment": "build", "emit-masks": "augment"}


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, failures: list[dict[str, Any]]):
        super().__init__(f"stage {stage}: {len(failures)} record(s) failed")
        self.stage = stage
        self.failures = failures


DEFAULT_CONFIG: dict[str, Any] = {
    "gateway": GatewayConfig().to_dict(),
    "sampler": {
        "level_weights": [0.25, 0.25, 0.25, 0.25],
        "multi_param_count_range": [2, 3],
    },
    "similarity": {"kind": "TokenOverlap", "endpoint": None, "threshold": 0.85, "model": None},
    "injection": {"type_weights": [250, 288, 284, 243, 500], "augment_fraction": 1.0},
    "tones": None,
    "workers": 4,
}


def _merge(base: dict[str, Any], over: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """defaults <- file <- overrides. Relative paths in the file resolve
    against the file's directory."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section, key in (("gateway", "mock_table"), ("gateway", "cache_directory"), (None, "tones")):
            holder = data.get(section, {}) if section else data
            if isinstance(holder, dict) and holder.get(key):
                p = Path(holder[key])
                if not p.is_absolute():
                    holder[key] = str(path.parent / p)
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(
        json.dumps(_portable(cfg), sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()


def _portable(cfg: dict[str, Any]) -> dict[str, Any]:
    """Config with file paths reduced to names, for hashing and manifests."""
    out = copy.deepcopy(cfg)
    gw = out.get("gateway", {})
    for key in ("mock_table", "cache_directory"):
        if gw.get(key):
            gw[key] = Path(gw[key]).name
    if out.get("tones"):
        out["tones"] = Path(out["tones"]).name
    return out


def make_gateway(cfg: dict[str, Any], **kwargs: Any) -> Gateway:
    return Gateway(GatewayConfig.from_dict(cfg["gateway"]), **kwargs)


# --------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    inputs: dict[str, str]
    outputs: dict[str, str]
    gateway_mode: str
    config: dict[str, Any]
    tool_version: str = __version__
    started_at: str | None = None
    finished_at: str | None = None
    failures: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "gateway_mode": self.gateway_mode,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "failures": dict(sorted(self.failures.items())),
            "config": self.config,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n", "utf-8")


def run_timestamp(cfg: dict[str, Any]) -> str | None:
    # Mock/Replay runs must be byte-reproducible, so they carry no wall-clock time.
    if Mode(cfg["gateway"]["mode"]) is Mode.LIVE:
        return datetime.now(timezone.utc).isoformat()
    return None


def write_manifest(
    command: str, cfg: dict[str, Any], seed: int,
    inputs: Iterable[Path], outputs: Iterable[Path], manifest_path: Path,
    started_at: str | None = None, failures: dict[str, int] | None = None,
) -> RunManifest:
    m = RunManifest(
        command=command,
        config_hash=config_hash(cfg),
        seed=seed,
        inputs={p.name: file_digest(p) for p in inputs if p.exists()},
        outputs={p.name: file_digest(p) for p in outputs if p.exists()},
        gateway_mode=Mode(cfg["gateway"]["mode"]).value,
        config=_portable(cfg),
        started_at=started_at,
        finished_at=run_timestamp(cfg),
        failures=failures or {},
    )
    m.write(manifest_path)
    return m


# --------------------------------------------------------------------------
# stages


def _pmap(fn: Callable[[Any], Any], items: list[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


_RECORD_ERRORS = (MalformedModelJson, PlanViolation, TransportError, CacheMiss)


def parse_source_record(row: dict[str, Any], index: int) -> tuple[str, str, SolutionPath, dict[str, Any]]:
    rid = str(row.get("record_id", index))
    query = row.get("original_query", row.get("query"))
    if not isinstance(query, str):
        raise ConfigError(f"record {rid}: missing query")
    solution = SolutionPath.from_list(row["solution"])
    if not solution.calls:
        raise ConfigError(f"record {rid}: empty solution")
    return rid, query, solution, row


def pinned_plan(solution: SolutionPath, spec: list) -> RemovalPlan:
    targets = frozenset((int(ci), str(n)) for ci, n in spec)
    return RemovalPlan(targets, level_for(sorted(targets)))


def degrade_stage(
    in_path: Path, out_path: Path, rejects_path: Path, cfg: dict[str, Any], seed: int,
    gateway: Gateway,
) -> list[dict[str, Any]]:
    """Returns the per-record failure ledger."""
    sampler = SamplerConfig.from_dict(cfg["sampler"])
    provider = SimilarityProviderConfig.from_dict(cfg["similarity"], gateway)
    rows = list(read_jsonl(in_path))

    def one(item: tuple[int, dict[str, Any]]) -> tuple[str, dict[str, Any]]:
        i, row = item
        rid, query, solution, _ = parse_source_record(row, i)
        if row.get("removal_plan") is not None:
            plan = pinned_plan(solution, row["removal_plan"])
        else:
            plan = sample_removal_plan(solution, sampler, rng_for(seed, "degrade", rid))
        try:
            rec = degrade_query(
                query, solution, plan, gateway, record_id=rid,
                relevant_apis=tuple(row["relevant_apis"]) if row.get("relevant_apis") else None,
                api_docs=row.get("api_docs"),
            )
        except _RECORD_ERRORS as exc:
            return "fail", {"record_id": rid, "stage": "degrade", "error": type(exc).__name__, "detail": str(exc)}
        verdict = quality_gate(rec, provider)
        if not verdict:
            return "reject", {"record_id": rid, "reason": verdict.reason.value, "detail": verdict.detail,
                              "record": rec.to_dict()}
        return "ok", rec.to_dict()

    results = _pmap(one, list(enumerate(rows)), int(cfg.get("workers", 1)))
    write_jsonl(out_path, (r for s, r in results if s == "ok"))
    write_jsonl(rejects_path, (r for s, r in results if s == "reject"))
    return [r for s, r in results if s == "fail"]


def build_stage(
    in_path: Path, out_path: Path, cfg: dict[str, Any], seed: int, gateway: Gateway,
    tones_path: Path | None = None,
) -> list[dict[str, Any]]:
    tones = load_tones(tones_path or cfg.get("tones"))
    rows = list(read_jsonl(in_path))

    def one(row: dict[str, Any]) -> tuple[str, dict[str, Any]]:
        rec = DegradedRecord.from_dict(row)
        try:
            rec = decompose_task(rec, gateway)
            rec = generate_questions(rec, gateway)
        except _RECORD_ERRORS as exc:
            return "fail", {"record_id": rec.record_id, "stage": "build", "error": type(exc).__name__, "detail": str(exc)}
        return "ok", assemble_dialogue(rec, tones, rng_for(seed, "build", rec.record_id)).to_dict()

    results = _pmap(one, rows, int(cfg.get("workers", 1)))
    write_jsonl(out_path, (r for s, r in results if s == "ok"))
    return [r for s, r in results if s == "fail"]


def augment_stage(
    in_path: Path, out_path: Path, cfg: dict[str, Any], seed: int, gateway: Gateway,
    stats_path: Path | None = None, policy: InjectionPolicy | None = None,
) -> tuple[AugmentationStats, list[dict[str, Any]]]:
    """Writes each source dialogue followed by its augmented copy (if any)."""
    policy = policy or InjectionPolicy.from_dict(cfg["injection"])
    rows = list(read_jsonl(in_path))

    def one(row: dict[str, Any]) -> tuple[dict[str, Any], DialogueRecord | None, dict[str, Any] | None]:
        d = DialogueRecord.from_dict(row)
        try:
            aug = augment_dialogue(d, policy, rng_for(seed, "augment", d.record_id), gateway)
        except _RECORD_ERRORS as exc:
            return row, None, {"record_id": d.record_id, "stage": "augment", "error": type(exc).__name__, "detail": str(exc)}
        return row, aug, None

    results = _pmap(one, rows, int(cfg.get("workers", 1)))
    stats = AugmentationStats()
    out_rows: list[dict[str, Any]] = []
    failures = []
    for row, aug, fail in results:
        out_rows.append(row)
        if fail:
            failures.append(fail)
        if aug is not None:
            stats.add(aug.injection.error_type)
            out_rows.append(aug.to_dict())
    write_jsonl(out_path, out_rows)
    if stats_path is not None:
        Path(stats_path).write_text(json.dumps(stats.to_dict(), indent=2) + "\n", "utf-8")
    return stats, failures


def emit_stage(in_path: Path, out_path: Path) -> int:
    samples = [emit(DialogueRecord.from_dict(r)) for r in read_jsonl(in_path)]
    export(samples, out_path)
    return len(samples)


# --------------------------------------------------------------------------
# full runs


@dataclass
class PipelineResult:
    outputs: dict[str, Path]
    manifest: RunManifest
    failures: list[dict[str, Any]]
    stats: AugmentationStats | None = None


def run_pipeline(
    stages: Iterable[str],
    cfg: dict[str, Any],
    seed: int,
    out_dir: str | Path,
    input_path: str | Path | None = None,
    gateway: Gateway | None = None,
) -> PipelineResult:
    """Run a contiguous slice of degrade -> build -> augment -> emit-masks.

    Outputs land in ``out_dir`` under fixed names; a stage that starts
    mid-pipeline reads its predecessor's file from ``out_dir``. Records that
    fail are written to ``failures.jsonl`` and raise StageFailure after all
    requested stages finished writing.
    """
    stages = list(stages)
    unknown = [s for s in stages if s not in STAGES]
    if unknown or not stages:
        raise ConfigError(f"unknown or empty stages: {unknown or stages}")
    idx = [STAGES.index(s) for s in stages]
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ConfigError(f"stages must be contiguous in pipeline order: {stages}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = stages[0]
    if first == "degrade":
        if input_path is None or not Path(input_path).exists():
            raise ConfigError(f"degrade needs an input file, got {input_path}")
        current_in = Path(input_path)
    else:
        current_in = out_dir / STAGE_FILES[STAGE_INPUT[first]]
        if not current_in.exists():
            raise ConfigError(f"stage {first} needs {current_in.name} from stage {STAGE_INPUT[first]}")
    gateway = gateway or make_gateway(cfg)
    started = run_timestamp(cfg)
    inputs = [current_in]
    outputs: dict[str, Path] = {}
    failures: list[dict[str, Any]] = []
    stats = None
    for stage in stages:
        out = out_dir / STAGE_FILES[stage]
        if stage == "degrade":
            rejects = out_dir / "rejects.jsonl"
            failures += degrade_stage(current_in, out, rejects, cfg, seed, gateway)
            outputs["rejects"] = rejects
        elif stage == "build":
            failures += build_stage(current_in, out, cfg, seed, gateway)
        elif stage == "augment":
            stats_path = out_dir / "augmentation_stats.json"
            stats, fails = augment_stage(current_in, out, cfg, seed, gateway, stats_path)
            failures += fails
            outputs["augmentation_stats"] = stats_path
        else:
            emit_stage(current_in, out)
        outputs[stage] = out
        current_in = out
    fail_path = out_dir / "failures.jsonl"
    if failures:
        write_jsonl(fail_path, failures)
    elif fail_path.exists():
        fail_path.unlink()
    counts = Counter(f["stage"] for f in failures)
    manifest = write_manifest(
        "pipeline " + ",".join(stages), cfg, seed, inputs, outputs.values(),
        out_dir / "manifest.json", started, dict(counts),
    )
    result = PipelineResult(outputs, manifest, failures, stats)
    if failures:
        err = StageFailure(failures[0]["stage"], failures)
        err.result = result  # type: ignore[attr-defined]
        raise err
    return result


# --------------------------------------------------------------------------
# statistics, splitting, validation


def dataset_stats(path: str | Path) -> dict[str, Any]:
    """Complexity-level and error-type counts over any stage's JSONL.

    Undecodable lines are recorded in ``corrupt_lines`` and skipped.
    """
    levels = {lv.value: 0 for lv in LEVEL_ORDER}
    errors = {t.value: 0 for t in ERROR_TYPES}
    corrupt: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                src = row.get("source", row)
                inj = row.get("injection")
                if inj:
                    errors[inj["error_type"]] += 1
                else:
                    levels[src["complexity_level"]] += 1
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError):
                corrupt.append(lineno)
    return {
        "complexity_levels": levels,
        "complexity_total": sum(levels.values()),
        "error_types": errors,
        "error_total": sum(errors.values()),
        "corrupt_lines": corrupt,
    }


def split_records(
    in_path: str | Path, train_path: str | Path, test_path: str | Path, ratio: float = 10.0, seed: int = 0
) -> tuple[int, int]:
    """Seeded shuffle of source records, then a train:test = ratio:1 cut.

    An augmented copy (``<id>#aug``) always lands in the same split as its
    source dialogue.
    """
    if ratio <= 0:
        raise ConfigError("ratio must be positive")
    rows = list(read_jsonl(in_path))
    groups: dict[str, list[dict[str, Any]]] = {}
    for i, row in enumerate(rows):
        groups.setdefault(str(row.get("record_id", i)).split("#")[0], []).append(row)
    order = sorted(groups, key=lambda k: (derive_seed(seed, "split", k), k))
    n_test = round(len(order) / (ratio + 1))
    test_ids = set(order[:n_test])
    test = [r for k in groups if k in test_ids for r in groups[k]]
    train = [r for k in groups if k not in test_ids for r in groups[k]]
    write_jsonl(train_path, train)
    write_jsonl(test_path, test)
    return len(train), len(test)


def validate_file(path: str | Path) -> list[dict[str, Any]]:
    out = []
    for i, row in enumerate(read_jsonl(path)):
        rid = row.get("record_id", i)
        try:
            d = DialogueRecord.from_dict(row)
        except (KeyError, ValueError, TypeError) as exc:
            out.append({"record_id": rid, "invariant": "decode", "location": f"line {i + 1}", "detail": str(exc)})
            continue
        for v in validate_record(d):
            out.append({"record_id": rid, "invariant": v.invariant, "location": v.location, "detail": v.detail})
    return out


def jsonl_line(obj: dict[str, Any]) -> str:
    return dumps(obj)

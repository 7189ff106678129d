"""Command-line front door: ``python -m intentclar <subcommand>``.

Exit status is 0 on success, 1 when any record failed a stage or the
validator found violations, and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

from .gateway import Gateway, GatewayConfig, Mode
from .harness import (
    GatewayAssistant,
    OracleAssistant,
    ScriptedAssistant,
    evaluate_records,
    load_api_pool,
    load_eval_records,
    load_personas,
)
from .inject import augmentation_stats_table
from .metrics import SessionTally, aggregate, format_table
from .pipeline import (
    STAGES,
    ConfigError,
    StageFailure,
    run_timestamp,
    augment_stage,
    build_stage,
    dataset_stats,
    degrade_stage,
    emit_stage,
    load_config,
    make_gateway,
    run_pipeline,
    split_records,
    validate_file,
    write_manifest,
)
from .util import read_jsonl, write_jsonl

log = logging.getLogger("intentclar")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config layered over the defaults")
    p.add_argument("--seed", type=int, help="master seed (default: config 'seed' or 0)")
    p.add_argument("--workers", type=int, help="per-stage concurrency")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="gateway mode")
    p.add_argument("--mock-table", type=Path, help="Mock-mode response table")
    p.add_argument("--cache-dir", type=Path, help="Live/Replay response cache")
    p.add_argument("--endpoint", help="Live-mode chat endpoint URL")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intentclar", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="turn seed queries into unspecified queries")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rejects", type=Path, help="quality-gate rejects (default: <out>.rejects.jsonl)")

    p = sub.add_parser("build", help="assemble clarification dialogues")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tones", type=Path, help="tone template file")

    p = sub.add_parser("augment", help="inject one error-correction pair per dialogue")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stats", type=Path, help="error-type counts (default: <out>.stats.json)")
    p.add_argument("--policy", type=Path, help="JSON with type_weights and augment_fraction")

    p = sub.add_parser("emit-masks", help="write training samples with loss spans")
    _common(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("pipeline", help="run a contiguous run of stages into one directory")
    _common(p)
    p.add_argument("--stages", default=",".join(STAGES), help="comma-separated, in pipeline order")
    p.add_argument("--in", dest="inp", type=Path, help="seed records (needed when starting at degrade)")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("split", help="seeded train/test split")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--ratio", type=float, default=10.0, help="train:test ratio (default 10)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="run assistant sessions against simulated users")
    _common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--level", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--assistant", required=True, help="oracle | script:<file> | http:<url>")
    p.add_argument("--out", type=Path, required=True, help="tallies JSONL")
    p.add_argument("--transcripts", type=Path, help="optional transcript JSONL")
    p.add_argument("--distractors", type=Path, help="API pool for Level II")
    p.add_argument("--personas", type=Path, help="persona file for Level III")
    p.add_argument("--round-cap", type=int, default=5, help="questions allowed per unspecified intent")

    p = sub.add_parser("report", help="aggregate tallies into a metrics grid")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--tss-mode", choices=("macro", "micro"), default="macro")
    p.add_argument("--prs-mode", choices=("macro", "micro"), default="macro")

    p = sub.add_parser("stats", help="complexity-level and error-type counts")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")

    p = sub.add_parser("validate", help="check dialogue invariants")
    p.add_argument("--in", dest="inp", type=Path, required=True)

    p = sub.add_parser("verify", help="rerun the reference bundle and diff against goldens")
    p.add_argument("--regenerate", action="store_true", help="rewrite the mock table and goldens")
    p.add_argument("--goldens", type=Path, help="alternative goldens directory")
    return ap


def _config(args: argparse.Namespace) -> dict[str, Any]:
    over: dict[str, Any] = {"gateway": {}}
    if args.mode:
        over["gateway"]["mode"] = args.mode
    if args.mock_table:
        over["gateway"]["mock_table"] = str(args.mock_table)
    if args.cache_dir:
        over["gateway"]["cache_directory"] = str(args.cache_dir)
    if args.endpoint:
        over["gateway"]["endpoint_url"] = args.endpoint
    if args.workers:
        over["workers"] = args.workers
    if getattr(args, "tones", None):
        over["tones"] = str(args.tones)
    if getattr(args, "policy", None):
        try:
            over["injection"] = json.loads(Path(args.policy).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read policy {args.policy}: {exc}") from exc
    cfg = load_config(args.config, over)
    try:
        GatewayConfig.from_dict(cfg["gateway"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad gateway config: {exc}") from exc
    return cfg


def _seed(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _require(path: Path) -> Path:
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    return path


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _finish_stage(
    command: str, args: argparse.Namespace, cfg: dict[str, Any], seed: int, started: str | None,
    outputs: list[Path], failures: list[dict[str, Any]],
) -> int:
    fail_path = _sidecar(args.out, ".failures.jsonl")
    if failures:
        write_jsonl(fail_path, failures)
        outputs = outputs + [fail_path]
    write_manifest(
        command, cfg, seed, [args.inp], outputs, _sidecar(args.out, ".manifest.json"),
        started, {command: len(failures)} if failures else None,
    )
    if failures:
        print(f"{command}: {len(failures)} record(s) failed; see {fail_path}", file=sys.stderr)
        return 1
    return 0


def _assistant_factory(spec: str, cfg: dict[str, Any]) -> Callable[[Any], Callable]:
    if spec == "oracle":
        return OracleAssistant
    if spec.startswith("script:"):
        path = _require(Path(spec[len("script:"):]))
        return lambda rec: ScriptedAssistant.from_file(path, rec)
    if spec.startswith("http:") or spec.startswith("https:"):
        url = spec[len("http:"):] if spec.startswith("http:") and not spec.startswith("http://") else spec
        gcfg = GatewayConfig.from_dict(dict(cfg["gateway"], mode=Mode.LIVE.value, endpoint_url=url, mock_table=None))
        gateway = Gateway(gcfg)
        return lambda rec: GatewayAssistant(gateway)
    raise ConfigError(f"unknown assistant mode {spec!r} (oracle | script:<file> | http:<url>)")


def _cmd_stage(args: argparse.Namespace) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    _require(args.inp)
    started = run_timestamp(cfg)
    if args.command == "emit-masks":
        emit_stage(args.inp, args.out)
        return _finish_stage(args.command, args, cfg, seed, started, [args.out], [])
    gateway = make_gateway(cfg)
    if args.command == "degrade":
        rejects = args.rejects or _sidecar(args.out, ".rejects.jsonl")
        failures = degrade_stage(args.inp, args.out, rejects, cfg, seed, gateway)
        outputs = [args.out, rejects]
    elif args.command == "build":
        failures = build_stage(args.inp, args.out, cfg, seed, gateway)
        outputs = [args.out]
    else:
        stats_path = args.stats or _sidecar(args.out, ".stats.json")
        stats, failures = augment_stage(args.inp, args.out, cfg, seed, gateway, stats_path)
        print(augmentation_stats_table(stats.counts))
        outputs = [args.out, stats_path]
    return _finish_stage(args.command, args, cfg, seed, started, outputs, failures)


def _cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _config(args)
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    try:
        result = run_pipeline(stages, cfg, _seed(args, cfg), args.out_dir, args.inp)
    except StageFailure as exc:
        print(f"{exc}; see {Path(args.out_dir) / 'failures.jsonl'}", file=sys.stderr)
        return 1
    for name, path in sorted(result.outputs.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    n_train, n_test = split_records(_require(args.inp), args.train, args.test, args.ratio, args.seed)
    print(f"train {n_train}  test {n_test}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    records = load_eval_records(_require(args.dataset))
    if not records:
        raise ConfigError(f"no records in {args.dataset}")
    gateway = make_gateway(cfg) if args.level > 1 else None
    distractors = load_api_pool(_require(args.distractors)) if args.distractors else None
    personas = load_personas(_require(args.personas)) if args.personas else None
    tallies, transcripts = evaluate_records(
        records, args.level, _assistant_factory(args.assistant, cfg), gateway, seed,
        personas, distractors, args.round_cap, int(cfg.get("workers", 1)),
    )
    write_jsonl(args.out, (t.to_dict() for t in tallies))
    if args.transcripts:
        write_jsonl(args.transcripts, (t.to_dict() for t in transcripts))
    print(format_table(aggregate(tallies)))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    tallies = [SessionTally.from_dict(r) for r in read_jsonl(_require(args.inp))]
    report = aggregate(tallies, args.tss_mode, args.prs_mode)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(format_table(report))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    stats = dataset_stats(_require(args.inp))
    if args.format == "json":
        print(json.dumps(stats, indent=2))
        return 0
    for name, count in stats["complexity_levels"].items():
        print(f"{name:<24}{count:>8}")
    print(f"{'Total':<24}{stats['complexity_total']:>8}")
    print()
    print(augmentation_stats_table(stats["error_types"]))
    if stats["corrupt_lines"]:
        print(f"\ncorrupt lines: {stats['corrupt_lines']}", file=sys.stderr)
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    violations = validate_file(_require(args.inp))
    for v in violations:
        print(f"{v['record_id']}: {v['invariant']} at {v['location']}: {v['detail']}")
    print(f"{len(violations)} violation(s)")
    return 1 if violations else 0


def _cmd_verify(args: argparse.Namespace) -> int:
    from .fixtures import regenerate, verify_bundle

    if args.regenerate:
        for path in regenerate():
            print(f"wrote {path}")
    report = verify_bundle(args.goldens)
    print(report.summary())
    return 0 if report.ok else 1


COMMANDS = {
    "degrade": _cmd_stage,
    "build": _cmd_stage,
    "augment": _cmd_stage,
    "emit-masks": _cmd_stage,
    "pipeline": _cmd_pipeline,
    "split": _cmd_split,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "stats": _cmd_stats,
    "validate": _cmd_validate,
    "verify": _cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from intentclar.cli import main
from intentclar.fixtures import FixtureBundle
from intentclar.util import read_jsonl, write_jsonl

BUNDLE = FixtureBundle()
CFG = ["--config", str(BUNDLE.config_path)]


def test_stage_by_stage_matches_goldens(tmp_path):
    g = BUNDLE.goldens
    assert main(["degrade", *CFG, "--in", str(BUNDLE.seed_records), "--out", str(tmp_path / "d.jsonl")]) == 0
    assert main(["build", *CFG, "--in", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "b.jsonl")]) == 0
    assert main(["augment", *CFG, "--in", str(tmp_path / "b.jsonl"), "--out", str(tmp_path / "a.jsonl")]) == 0
    assert main(["emit-masks", "--in", str(tmp_path / "a.jsonl"), "--out", str(tmp_path / "s.jsonl")]) == 0
    assert (tmp_path / "d.jsonl").read_bytes() == (g / "degraded.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (g / "augmented.jsonl").read_bytes()
    assert (tmp_path / "s.jsonl").read_bytes() == (g / "samples.jsonl").read_bytes()
    for stem in ("d", "b", "a", "s"):
        assert (tmp_path / f"{stem}.manifest.json").exists()
    assert json.loads((tmp_path / "a.stats.json").read_text())


def test_policy_file_changes_augmentation(tmp_path):
    policy = tmp_path / "p.json"
    policy.write_text(json.dumps({"type_weights": [0, 0, 0, 0, 1], "augment_fraction": 1.0}))
    out = tmp_path / "a.jsonl"
    dialogues = BUNDLE.goldens / "dialogues.jsonl"
    assert main(["augment", *CFG, "--in", str(dialogues), "--out", str(out), "--policy", str(policy)]) == 0
    kinds = {r["injection"]["error_type"] for r in read_jsonl(out) if r["injection"]}
    assert kinds == {"Incomplete"}
    manifest = json.loads((tmp_path / "a.manifest.json").read_text())
    assert manifest["config"]["injection"]["type_weights"] == [0, 0, 0, 0, 1]


def test_pipeline_and_stats(tmp_path, capsys):
    assert main(["pipeline", *CFG, "--in", str(BUNDLE.seed_records), "--out-dir", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["stats", "--in", str(tmp_path / "augmented.jsonl"), "--format", "json"]) == 0
    s = json.loads(capsys.readouterr().out)
    assert s["complexity_total"] == 5 and s["error_total"] == 5


def test_missing_input_is_config_error(tmp_path, capsys):
    assert main(["build", *CFG, "--in", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["pipeline", *CFG, "--stages", "augment", "--out-dir", str(tmp_path)]) == 2


def test_record_failure_exits_one(tmp_path):
    rows = list(read_jsonl(BUNDLE.seed_records))
    rows[1]["query"] += " (edited so no mock entry matches)"
    src = tmp_path / "seed.jsonl"
    write_jsonl(src, rows)
    assert main(["degrade", *CFG, "--in", str(src), "--out", str(tmp_path / "d.jsonl")]) == 1
    failures = list(read_jsonl(tmp_path / "d.failures.jsonl"))
    assert [f["record_id"] for f in failures] == ["news"]


def test_validate_exit_codes(tmp_path):
    good = BUNDLE.goldens / "augmented.jsonl"
    assert main(["validate", "--in", str(good)]) == 0
    rows = list(read_jsonl(good))
    rows[0]["turns"][1]["text"] += " <EOE>"
    write_jsonl(tmp_path / "bad.jsonl", rows)
    assert main(["validate", "--in", str(tmp_path / "bad.jsonl")]) == 1


def test_split(tmp_path):
    args = ["split", "--in", str(BUNDLE.goldens / "augmented.jsonl"),
            "--train", str(tmp_path / "tr.jsonl"), "--test", str(tmp_path / "te.jsonl"), "--ratio", "4"]
    assert main(args) == 0
    tr = list(read_jsonl(tmp_path / "tr.jsonl"))
    te = list(read_jsonl(tmp_path / "te.jsonl"))
    assert len(tr) + len(te) == 10 and len(te) == 2


def test_evaluate_then_report(tmp_path, capsys):
    tallies = tmp_path / "t.jsonl"
    data = str(BUNDLE.goldens / "augmented.jsonl")
    assert main(["evaluate", *CFG, "--dataset", data, "--level", "1", "--assistant", "oracle",
                 "--out", str(tallies), "--transcripts", str(tmp_path / "tr.jsonl")]) == 0
    assert len(list(read_jsonl(tmp_path / "tr.jsonl"))) == 5
    capsys.readouterr()
    assert main(["report", "--in", str(tallies), "--format", "json"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["icr"] == r["ce"] == r["cps"] == 1.0 and r["ir"] == 1.2
    assert main(["report", "--in", str(tallies)]) == 0
    assert "Level I" in capsys.readouterr().out


def test_evaluate_scripted_assistant(tmp_path):
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"responses": ["[QUESTION] What now?"]}))
    data = str(BUNDLE.goldens / "augmented.jsonl")
    assert main(["evaluate", *CFG, "--dataset", data, "--level", "1",
                 "--assistant", f"script:{script}", "--out", str(tmp_path / "t.jsonl")]) == 0
    terms = {t["termination"] for t in read_jsonl(tmp_path / "t.jsonl")}
    assert terms == {"RoundCapExceeded"}


def test_unknown_assistant_mode(tmp_path):
    data = str(BUNDLE.goldens / "augmented.jsonl")
    assert main(["evaluate", *CFG, "--dataset", data, "--level", "1", "--assistant", "magic",
                 "--out", str(tmp_path / "t.jsonl")]) == 2


def test_verify_pristine():
    assert main(["verify"]) == 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "intentclar", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "emit-masks" in out.stdout

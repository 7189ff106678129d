from __future__ import annotations

import hashlib
import shutil

import pytest

from intentclar.fixtures import GOLDEN_FILES, FixtureBundle, first_difference, verify_bundle
from intentclar.harness import load_personas
from intentclar.resources import PROMPT_NAMES, prompt
from intentclar.util import read_jsonl

# Guards the shipped prompt wording against accidental edits.
PROMPT_DIGESTS = {
    "decompose": "dd7d403b67f2a352f7c796659fbdb0f3c429ac86754fc358ded08916a38b5a36",
    "degrade": "374649d9839489ac03d42905189d010c442bebb0d0b8ea6f68bc5622f7f73dd8",
    "error_clearly_stated": "1620790f702d01887e05b8f52f06f9b66a6b039a52d1f47873728bdc6f77be6f",
    "error_imprecise": "f65aab1d1815c999ccd3e5e600ec4d8e0a446e42124136a469ce0445727e9414",
    "error_irrelevant": "917d5b95a7f7e11a083e6aa1fb69641ffbf53d0859538364d878758a6ffdaeb1",
    "evaluation": "785a1d2a83cd0ad718a31a5bf2a37287c2f00e284796886d24f166441664bc4d",
    "questions": "9809aff41f0466ee480c47be568ac10fddf37c2d55c84a0758caca619f2bd11f",
    "user_base": "1ab74f67e2eddc3ef58f7e16281046510830a63a6c891e15a6aeef40c0cdfb47",
    "user_persona": "07650b814ee8f721e48af8e6a5eb6f48054329f8cf7523b3aeeab876e02573b2",
}


def test_pristine_bundle_verifies():
    report = verify_bundle()
    assert report.ok, report.summary()
    m = report.metrics
    assert m["icr"] == m["ce"] == m["tss"] == m["prs"] == 1.0


@pytest.mark.parametrize("name", ["augmented.jsonl", "samples.jsonl"])
def test_flipped_byte_names_file_and_offset(tmp_path, name):
    goldens = tmp_path / "goldens"
    shutil.copytree(FixtureBundle().goldens, goldens)
    path = goldens / name
    raw = bytearray(path.read_bytes())
    offset = len(raw) // 2
    raw[offset] ^= 0x01
    path.write_bytes(bytes(raw))
    report = verify_bundle(goldens)
    assert not report.ok
    assert [(d.file, d.offset) for d in report.diffs] == [(name, offset)]
    assert f"{name} at byte {offset}" in report.summary()


def test_missing_golden_is_reported(tmp_path):
    goldens = tmp_path / "goldens"
    shutil.copytree(FixtureBundle().goldens, goldens)
    (goldens / "dialogues.jsonl").unlink()
    report = verify_bundle(goldens)
    assert [d.file for d in report.diffs] == ["dialogues.jsonl"]


def test_first_difference():
    assert first_difference(b"abc", b"abc") is None
    assert first_difference(b"abc", b"abd") == 2
    assert first_difference(b"ab", b"abc") == 2


def test_bundle_layout():
    b = FixtureBundle()
    for name in GOLDEN_FILES:
        assert (b.goldens / name).exists()
    ids = [r["record_id"] for r in read_jsonl(b.seed_records)]
    assert ids == ["passport", "news", "video_call", "wireless_mouse", "housework"]
    assert b.mock_table.exists() and b.distractors.exists()


def test_prompt_digests_pinned():
    assert set(PROMPT_DIGESTS) <= set(PROMPT_NAMES)
    for name, digest in PROMPT_DIGESTS.items():
        assert hashlib.sha256(prompt(name).encode("utf-8")).hexdigest() == digest, name


@pytest.mark.parametrize("name", ["user_base", "user_persona"])
def test_typo_kept_verbatim_and_fixed_in_normalized(name):
    assert "Cannot answer multiple infomation at once" in prompt(name)
    fixed = prompt(name, normalized=True)
    assert "infomation" not in fixed and "Cannot answer multiple information at once" in fixed
    assert fixed == prompt(name).replace("infomation", "information")


def test_six_personas():
    names = [p.type_name for p in load_personas()]
    assert len(names) == 6 and "A cold fish" in names and "An enthusiastic supporter" in names

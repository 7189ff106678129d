"""Build clarification dialogues from the reference bundle.

Walks the first two stages by hand, in Mock mode, so no model endpoint is
needed:

    1. sample which parameters to hide and ask the model to rewrite the query
    2. decompose the task, generate questions, and lay out the dialogue

Run: python demos/01_build_dataset.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from intentclar import FixtureBundle, dataset_stats, run_pipeline
from intentclar.model import DialogueRecord
from intentclar.util import read_jsonl


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="intentclar-"))
    bundle = FixtureBundle()
    cfg = bundle.config()
    print(f"gateway mode: {cfg['gateway']['mode']}, seed: {bundle.seed}")

    result = run_pipeline(["degrade", "build"], cfg, bundle.seed, out_dir, bundle.seed_records)
    for name, path in result.outputs.items():
        print(f"  {name:<8} -> {path}")

    print("\nWhat the degrader changed:")
    for row in read_jsonl(out_dir / "degraded.jsonl"):
        print(f"  [{row['complexity_level']}] {row['record_id']}")
        print(f"      before: {row['original_query']}")
        print(f"      after:  {row['unspecified_query']}")

    print("\nThe assembled dialogue for the news record:")
    news = next(
        DialogueRecord.from_dict(r) for r in read_jsonl(out_dir / "dialogues.jsonl") if r["record_id"] == "news"
    )
    for turn in news.turns:
        print(f"  {turn.speaker.value:>9} | {turn.text[:110]}")

    stats = dataset_stats(out_dir / "dialogues.jsonl")
    print("\nComplexity levels:", stats["complexity_levels"])
    print(f"Outputs are in {out_dir}; the manifest records digests of each file.")


if __name__ == "__main__":
    main()

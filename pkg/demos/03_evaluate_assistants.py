"""Score three toy assistants against rule-based simulated users.

- the oracle asks every stored question once, then summarizes gold
- the hasty assistant summarizes at once, with placeholders for what it was not told
- the chatty assistant asks two questions per turn and never summarizes

Level I users answer by rule, so the numbers below are fully determined by
the bundle and the seed.

Run: python demos/03_evaluate_assistants.py
"""

from __future__ import annotations

from intentclar import FixtureBundle
from intentclar.harness import OracleAssistant, ScriptedAssistant, evaluate_records, load_eval_records
from intentclar.metrics import aggregate, format_table
from intentclar.model import SUMMARY_LEAD, DegradedRecord, SolutionPath, ToolCall, serialize_solution


def hasty(record: DegradedRecord) -> ScriptedAssistant:
    calls = []
    for entry in record.key_info.entries:
        params = tuple(
            (name, f"<unknown_{name}>" if spec.removed else spec.original) for name, spec in entry.parameters
        )
        calls.append(ToolCall(entry.api_name, params))
    return ScriptedAssistant([SUMMARY_LEAD + serialize_solution(SolutionPath(tuple(calls)))])


def chatty(record: DegradedRecord) -> ScriptedAssistant:
    return ScriptedAssistant(["[QUESTION] What do you need? [QUESTION] Anything else?"])


def main() -> None:
    bundle = FixtureBundle()
    records = load_eval_records(bundle.goldens / "dialogues.jsonl")
    print(f"{len(records)} records, {sum(len(r.key_info.removed()) for r in records)} hidden intents\n")
    for name, factory in (("oracle", OracleAssistant), ("hasty", hasty), ("chatty", chatty)):
        tallies, transcripts = evaluate_records(records, 1, factory, seed=bundle.seed)
        ends = sorted({t.termination.value for t in transcripts})
        print(f"== {name} (sessions ended: {', '.join(ends)})")
        print(format_table(aggregate(tallies)))
        print()


if __name__ == "__main__":
    main()

"""Inject errors into dialogues and emit masked training samples.

Each error type is forced once on a record that supports it. The sample
printout shows which bytes are trainable: text inside <SOE>...<EOE> is
left out of the loss, while the correction that follows stays in.

Run: python demos/02_augment_and_mask.py
"""

from __future__ import annotations

from intentclar import FixtureBundle, make_gateway
from intentclar.inject import InjectionPolicy, augment_dialogue, feasible_types
from intentclar.masking import emit
from intentclar.model import ERROR_TYPES, SOE, DialogueRecord
from intentclar.util import read_jsonl


def show_sample(dialogue: DialogueRecord) -> None:
    sample = emit(dialogue)
    for (role, content), spans in zip(sample.messages, sample.loss_spans):
        raw = content.encode("utf-8")
        trained = sum(b - a for a, b in spans)
        print(f"    {role:<9} {trained:>4}/{len(raw):<4} bytes trained")
    # a Redundant error repeats an earlier real question, so check the marked segment itself
    print(f"    marked segment trained? {SOE in sample.trainable_text()}")


def main() -> None:
    bundle = FixtureBundle()
    gateway = make_gateway(bundle.config())
    dialogues = [DialogueRecord.from_dict(r) for r in read_jsonl(bundle.goldens / "dialogues.jsonl")]

    for tau in ERROR_TYPES:
        dialogue = next((d for d in dialogues if tau in feasible_types(d)), None)
        if dialogue is None:
            print(f"{tau.value}: no bundle record supports it")
            continue
        aug = augment_dialogue(dialogue, InjectionPolicy(), 1, gateway, force_type=tau)
        print(f"\n{tau.value} on {dialogue.record_id} (position {aug.injection.position})")
        print(f"  error:      {aug.injection.error_text[:100]}")
        print(f"  correction: {aug.injection.correction_text[:100]}")
        show_sample(aug)


if __name__ == "__main__":
    main()

"""Seeding, JSONL I/O, and the JSON-returning model call used by every stage."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TypeVar

from .gateway import Gateway

log = logging.getLogger(__name__)

T = TypeVar("T")


class MalformedModelJson(ValueError):
    pass


def derive_seed(master_seed: int, *parts: object) -> int:
    """64-bit seed from the master seed and a path such as (stage, record_id).

    Per-record seeds make stage output independent of worker scheduling.
    """
    text = ":".join([str(int(master_seed))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def rng_for(master_seed: int, *parts: object) -> random.Random:
    return random.Random(derive_seed(master_seed, *parts))


def as_rng(seed: int | random.Random | None) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def first_json_object(text: str) -> dict[str, Any]:
    """Decode the first JSON object in a model reply (fences and chatter allowed)."""
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            value, _ = decoder.raw_decode(text, idx)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(value, dict):
                return value
        idx = text.find("{", idx + 1)
    raise MalformedModelJson("no JSON object in model response")


def ask_json(
    gateway: Gateway,
    system_prompt: str,
    payload: dict[str, Any],
    check: Callable[[dict[str, Any]], T],
) -> T:
    """Send ``payload`` as JSON, decode the reply and validate it with ``check``.

    ``check`` raises ``MalformedModelJson`` (or a subclass) for unusable replies.
    One follow-up reprompt quoting the problem is allowed before the error
    propagates.
    """
    request = gateway.request(system_prompt, json.dumps(payload, ensure_ascii=False, indent=2))
    reply = gateway.complete(request)
    try:
        return check(first_json_object(reply))
    except MalformedModelJson as exc:
        log.info("reprompting after malformed reply: %s", exc)
        retry = request.followup(
            reply,
            f"Your previous output could not be used: {exc}. "
            "Return only the JSON object in the required format.",
        )
        return check(first_json_object(gateway.complete(retry)))

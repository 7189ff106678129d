"""Access to the packaged prompt texts and template banks."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

DATA = resources.files("intentclar") / "data"

# Prompt text is behavioral surface: files are verbatim, typos included.
# Pass normalized=True for the cleaned user-simulator variants.
PROMPT_NAMES = (
    "degrade",
    "decompose",
    "questions",
    "error_clearly_stated",
    "error_imprecise",
    "error_irrelevant",
    "evaluation",
    "user_base",
    "user_persona",
)


@lru_cache(maxsize=None)
def prompt(name: str, normalized: bool = False) -> str:
    if name not in PROMPT_NAMES:
        raise KeyError(name)
    fname = f"{name}_normalized.txt" if normalized and name.startswith("user_") else f"{name}.txt"
    return (DATA / "prompts" / fname).read_text("utf-8").rstrip("\n")


def data_path(*parts: str) -> Path:
    return Path(str(DATA.joinpath(*parts)))


def load_json(path: str | Path) -> object:
    return json.loads(Path(path).read_text("utf-8"))


def ordinal(n: int) -> str:
    """1 -> 'first', 2 -> 'second', ...; falls back to '21st'-style suffixes."""
    words = [
        "first", "second", "third", "fourth", "fifth", "sixth", "seventh",
        "eighth", "ninth", "tenth", "eleventh", "twelfth",
    ]
    if 1 <= n <= len(words):
        return words[n - 1]
    suffix = "th" if 10 <= n % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"

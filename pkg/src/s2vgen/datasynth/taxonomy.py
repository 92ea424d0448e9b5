"""Caption-to-category matching against a synonym taxonomy."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class Taxonomy:
    categories: dict[str, tuple[str, ...]]

    def __post_init__(self):
        seen: dict[str, str] = {}
        cats = {}
        for cat, syns in self.categories.items():
            norm = tuple(normalize(s) for s in syns)
            for s in norm:
                if not s:
                    raise ValueError(f"empty synonym in category {cat!r}")
                if s in seen:
                    raise ValueError(f"synonym {s!r} appears in {seen[s]!r} and {cat!r}")
                seen[s] = cat
            cats[cat] = norm
        object.__setattr__(self, "categories", cats)

    def lookup(self) -> dict[str, str]:
        return {s: cat for cat, syns in self.categories.items() for s in syns}


class Match(NamedTuple):
    category: str
    synonym: str
    span: tuple[int, int]


DEFAULT_TAXONOMY = Taxonomy(
    {
        "circle": ("circle", "disc", "ball", "round sprite"),
        "square": ("square", "box", "block"),
        "triangle": ("triangle", "wedge"),
        "diamond": ("diamond", "rhombus", "lozenge"),
    }
)

_WORD = re.compile(r"\w")


def _is_boundary(text: str, i: int) -> bool:
    """True if position ``i`` is not inside a word (between two word characters)."""
    if i <= 0 or i >= len(text):
        return True
    return not (_WORD.match(text[i - 1]) and _WORD.match(text[i]))


def match_taxonomy(caption: str, taxonomy: Taxonomy) -> list[Match]:
    """Longest-match, left-to-right scan; matches must start and end on word boundaries.

    Spans index the original caption. A space inside a synonym matches any run
    of whitespace.
    """
    if not taxonomy.categories:
        raise ValueError("taxonomy is empty")
    table = taxonomy.lookup()
    compiled = [(syn, re.compile(r"\s+".join(re.escape(w) for w in syn.split(" ")))) for syn in table]
    lower = caption.lower()
    out: list[Match] = []
    pos = 0
    while pos < len(caption):
        best = None
        if _is_boundary(caption, pos):
            for syn, rx in compiled:
                m = rx.match(lower, pos)
                if m and _is_boundary(caption, m.end()) and (best is None or m.end() > best[1].end()):
                    best = (syn, m)
        if best is None:
            pos += 1
            continue
        syn, m = best
        out.append(Match(table[syn], syn, (m.start(), m.end())))
        pos = m.end()
    return out

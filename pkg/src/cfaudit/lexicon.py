"""Social-group-term lexicon: loading, validation, substitution buckets, matching.

The lexicon is a flat CSV of single-token surfaces, each tagged with one of
seven identity categories and a grammatical role (noun, adjective, or both).
Matching is case-insensitive and word-bounded: a neighbour counts as a
boundary when it is absent or not a unicode letter, so "turk" matches inside
"die turk!" but not inside "turkse".
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .errors import ValidationError

CATEGORIES = ("nationality", "skincolor", "gender", "sexuality", "religion", "age", "ideology")
POS_TAGS = ("noun", "adjective", "both")

# Hyphen and apostrophe are word-internal in Dutch orthography ("non-binair",
# "'s"); all other punctuation is rejected in surfaces.
_INNER_CHARS = "-'"

_LETTER = r"[^\W\d_]"  # one unicode letter


@dataclass(frozen=True)
class SocialGroupTerm:
    """One lexicon entry: a lowercase single-token surface plus its tags."""

    surface: str
    category: str
    pos: str


def _surface_problem(surface: str) -> str | None:
    """Return a description of what is wrong with a surface, or None."""
    if not surface:
        return "empty surface"
    if surface != surface.lower():
        return f"surface {surface!r} must be lowercase"
    for ch in surface:
        if ch.isspace():
            return f"surface {surface!r} contains whitespace"
        if not (ch.isalpha() or ch.isdigit() or ch in _INNER_CHARS):
            return f"surface {surface!r} contains {ch!r}"
    if surface[0] in _INNER_CHARS or surface[-1] in _INNER_CHARS:
        return f"surface {surface!r}: hyphen/apostrophe only allowed between letters"
    return None


def _validate_term(term: SocialGroupTerm) -> str | None:
    problem = _surface_problem(term.surface)
    if problem:
        return problem
    if term.category not in CATEGORIES:
        return f"unknown category {term.category!r}"
    if term.pos not in POS_TAGS:
        return f"unknown pos {term.pos!r}"
    return None


@dataclass
class Lexicon:
    """An ordered, duplicate-free collection of terms for one language."""

    terms: tuple[SocialGroupTerm, ...]
    language: str = "nl"
    _by_surface: dict[str, SocialGroupTerm] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.terms = tuple(self.terms)
        index: dict[str, SocialGroupTerm] = {}
        for term in self.terms:
            problem = _validate_term(term)
            if problem:
                raise ValidationError(f"invalid lexicon term: {problem}")
            if term.surface in index:
                raise ValidationError(f"duplicate surface {term.surface!r}")
            index[term.surface] = term
        object.__setattr__(self, "_by_surface", index)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.terms)

    @property
    def categories(self) -> tuple[str, ...]:
        seen = dict.fromkeys(t.category for t in self.terms)
        return tuple(seen)

    def get(self, surface: str) -> SocialGroupTerm | None:
        return self._by_surface.get(surface.lower())


@dataclass(frozen=True)
class SgtMatch:
    """One word-bounded occurrence of a lexicon term in a text."""

    term: SocialGroupTerm
    start: int
    end: int


@dataclass
class SubstitutionDictionary:
    """Terms bucketed by (category, pos); pos=both terms sit in both buckets."""

    buckets: dict[tuple[str, str], list[SocialGroupTerm]]

    def bucket(self, category: str, pos: str) -> list[SocialGroupTerm]:
        return self.buckets.get((category, pos), [])

    def buckets_for(self, term: SocialGroupTerm) -> list[list[SocialGroupTerm]]:
        """The bucket(s) a term belongs to, noun before adjective for pos=both."""
        poses = ("noun", "adjective") if term.pos == "both" else (term.pos,)
        found = []
        for pos in poses:
            bucket = self.buckets.get((term.category, pos), [])
            if term in bucket:
                found.append(bucket)
        return found


def load_lexicon(path: str | Path) -> Lexicon:
    """Load and validate a term list from CSV.

    Format: UTF-8, header ``surface,category,pos``, one term per row, lines
    starting with ``#`` are comments. Entry order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))

    rows: list[tuple[int, list[str]]] = []
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cells = next(csv.reader([line]))
            rows.append((lineno, [c.strip() for c in cells]))

    if not rows:
        raise ValidationError(f"{path}: empty lexicon file")
    header_line, header = rows[0]
    if header != ["surface", "category", "pos"]:
        raise ValidationError(f"{path}:{header_line}: expected header 'surface,category,pos'")

    terms: list[SocialGroupTerm] = []
    first_seen: dict[str, int] = {}
    for lineno, cells in rows[1:]:
        if len(cells) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 columns, got {len(cells)}")
        term = SocialGroupTerm(surface=cells[0], category=cells[1], pos=cells[2])
        problem = _validate_term(term)
        if problem:
            raise ValidationError(f"{path}:{lineno}: {problem}")
        if term.surface in first_seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate surface {term.surface!r}"
                f" (first at line {first_seen[term.surface]})"
            )
        first_seen[term.surface] = lineno
        terms.append(term)

    if not terms:
        raise ValidationError(f"{path}: lexicon has no terms")
    return Lexicon(tuple(terms))


def build_dictionary(lex: Lexicon) -> SubstitutionDictionary:
    """Partition the lexicon into (category, pos) buckets, lexicon order kept.

    A pos=both term is duplicated into the noun and adjective bucket of its
    category, so total bucket size is nouns + adjectives + 2 * both.
    """
    buckets: dict[tuple[str, str], list[SocialGroupTerm]] = {}
    for term in lex.terms:
        poses = ("noun", "adjective") if term.pos == "both" else (term.pos,)
        for pos in poses:
            buckets.setdefault((term.category, pos), []).append(term)
    return SubstitutionDictionary(buckets)


@lru_cache(maxsize=64)
def _matcher(surfaces: tuple[str, ...]) -> re.Pattern[str]:
    # Longest alternative first so the longest surface wins at equal start.
    ordered = sorted(surfaces, key=len, reverse=True)
    body = "|".join(re.escape(s) for s in ordered)
    return re.compile(rf"(?<!{_LETTER})(?:{body})(?!{_LETTER})", re.IGNORECASE)


def find_sgts(text: str, lex: Lexicon) -> list[SgtMatch]:
    """All non-overlapping, word-bounded, case-insensitive term occurrences.

    Matches are scanned left to right, so they come back ordered by start
    offset and never overlap.
    """
    if not lex.terms:
        return []
    pattern = _matcher(lex.surfaces)
    matches = []
    for m in pattern.finditer(text):
        term = lex.get(m.group(0))
        if term is None:  # cannot happen: alternation only contains surfaces
            continue
        matches.append(SgtMatch(term=term, start=m.start(), end=m.end()))
    return matches

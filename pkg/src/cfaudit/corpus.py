"""Labeled post ingestion, preprocessing, SGT filtering and dataset statistics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .lexicon import Lexicon, find_sgts
from .util import read_jsonl, write_jsonl

LABELS = ("appropriate", "inappropriate", "offensive", "violent")

# Apostrophes and hyphens carry lexical weight in Dutch ("'s ochtends",
# "ex-moslim") and survive preprocessing; the curly quote is treated as an
# apostrophe variant.
_KEPT_PUNCT = "'’-"


@dataclass(frozen=True)
class Post:
    """One labeled social-media post."""

    id: str
    text: str
    label: str
    source: str | None = None


def preprocess(text: str) -> str:
    """Strip emoji and special signs, collapse whitespace, keep case.

    Every character outside unicode letters, digits, whitespace, apostrophe
    and hyphen is deleted (not blanked), then whitespace runs collapse to
    single spaces and the ends are trimmed. Idempotent.
    """
    kept = [
        ch
        for ch in text
        if ch.isalpha() or ch.isdigit() or ch.isspace() or ch in _KEPT_PUNCT
    ]
    return " ".join("".join(kept).split())


def filter_corpus(posts: Sequence[Post], lex: Lexicon) -> list[Post]:
    """Exactly the posts that contain at least one SGT, order preserved."""
    return [p for p in posts if find_sgts(p.text, lex)]


def shannon_entropy(counts: Mapping[str, int]) -> float:
    """Entropy in bits of the frequency distribution given by ``counts``."""
    for key, value in counts.items():
        if value < 0:
            raise ValueError(f"negative count for {key!r}")
    total = sum(counts.values())
    if total == 0:
        raise ValueError("all counts are zero")
    entropy = 0.0
    for value in counts.values():
        if value > 0:
            p = value / total
            entropy -= p * math.log2(p)
    return entropy


@dataclass(frozen=True)
class LabelStats:
    """Per-label corpus statistics.

    ``avg_len`` is the mean whitespace-token count per post. ``sgt_entropy``
    is the entropy over SGT occurrence counts (every match counts once) and
    is None when the label's posts contain no SGT at all.
    """

    count: int
    avg_len: float
    sgt_entropy: float | None


def corpus_stats(posts: Sequence[Post], lex: Lexicon) -> dict[str, LabelStats]:
    """Count, average token length and SGT entropy for each label present.

    Labels with zero posts are absent from the result rather than reported
    as zeros. Token totals are summed as exact integers before dividing, so
    the result does not depend on how posts are chunked.
    """
    token_totals: dict[str, int] = {}
    post_counts: dict[str, int] = {}
    sgt_counts: dict[str, Counter[str]] = {}

    for post in posts:
        post_counts[post.label] = post_counts.get(post.label, 0) + 1
        token_totals[post.label] = token_totals.get(post.label, 0) + len(post.text.split())
        counter = sgt_counts.setdefault(post.label, Counter())
        for match in find_sgts(post.text, lex):
            counter[match.term.surface] += 1

    stats: dict[str, LabelStats] = {}
    for label in LABELS:
        if label not in post_counts:
            continue
        count = post_counts[label]
        avg_len = token_totals[label] / count
        counter = sgt_counts[label]
        entropy = shannon_entropy(counter) if counter else None
        stats[label] = LabelStats(count=count, avg_len=avg_len, sgt_entropy=entropy)
    return stats


def read_posts(path: str | Path) -> list[Post]:
    """Read a JSONL posts file, validating ids, labels and text."""
    posts: list[Post] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl(path):
        for key in ("id", "text", "label"):
            if key not in obj:
                raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
        post_id = obj["id"]
        if not isinstance(post_id, str) or not post_id:
            raise ValidationError(f"{path}:{lineno}: id must be a non-empty string")
        if post_id in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate post id {post_id!r} (first at line {seen[post_id]})"
            )
        seen[post_id] = lineno
        if not isinstance(obj["text"], str):
            raise ValidationError(f"{path}:{lineno}: text must be a string")
        if obj["label"] not in LABELS:
            raise ValidationError(f"{path}:{lineno}: unknown label {obj['label']!r}")
        source = obj.get("source")
        if source is not None and not isinstance(source, str):
            raise ValidationError(f"{path}:{lineno}: source must be a string when present")
        posts.append(Post(id=post_id, text=obj["text"], label=obj["label"], source=source))
    return posts


def write_posts(path: str | Path, posts: Iterable[Post]) -> int:
    def record(post: Post) -> dict:
        rec = {"id": post.id, "text": post.text, "label": post.label}
        if post.source is not None:
            rec["source"] = post.source
        return rec

    return write_jsonl(path, (record(p) for p in posts))

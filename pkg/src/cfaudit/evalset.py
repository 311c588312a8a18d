"""Template-based counterfactual evaluation set.

Short toxic/non-toxic phrase templates carry one ``{sgt}`` slot; instantiating
every template with every lexicon term yields matched sentence families whose
members differ only in the identity term.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ValidationError
from .lexicon import CATEGORIES, Lexicon, SocialGroupTerm
from .util import read_jsonl, write_jsonl

SLOT = "{sgt}"
TOXICITY = ("toxic", "nontoxic")


@dataclass(frozen=True)
class Template:
    """A phrase pattern with exactly one term slot and at most 4 tokens."""

    id: str
    pattern: str
    toxicity: str


@dataclass(frozen=True)
class EvalSentence:
    """One template instantiation; gold label comes from the template."""

    template_id: str
    sgt: SocialGroupTerm
    text: str
    gold: str

    @property
    def key(self) -> str:
        """Stable prediction id: template id and surface joined by '+'."""
        return f"{self.template_id}+{self.sgt.surface}"


def load_templates(path: str | Path) -> list[Template]:
    """Load templates from CSV ``id,pattern,toxicity`` (# comments allowed)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))

    rows: list[tuple[int, list[str]]] = []
    with open(path, encoding="utf-8-sig") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            rows.append((lineno, next(csv.reader([line]))))

    if not rows:
        raise ValidationError(f"{path}: empty template file; need at least one template")
    header_line, header = rows[0]
    if [c.strip() for c in header] != ["id", "pattern", "toxicity"]:
        raise ValidationError(f"{path}:{header_line}: expected header 'id,pattern,toxicity'")

    templates: list[Template] = []
    seen: dict[str, int] = {}
    for lineno, cells in rows[1:]:
        if len(cells) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 columns, got {len(cells)}")
        template_id, pattern, toxicity = cells[0].strip(), cells[1], cells[2].strip()
        if not template_id:
            raise ValidationError(f"{path}:{lineno}: empty template id")
        if template_id in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate template id {template_id!r}"
                f" (first at line {seen[template_id]})"
            )
        seen[template_id] = lineno
        slots = pattern.count(SLOT)
        if slots != 1:
            raise ValidationError(
                f"{path}:{lineno}: template {template_id!r} must contain the slot"
                f" marker {SLOT!r} exactly once, found {slots}"
            )
        if len(pattern.split()) > 4:
            raise ValidationError(
                f"{path}:{lineno}: template {template_id!r} has more than 4 tokens"
            )
        if toxicity not in TOXICITY:
            raise ValidationError(
                f"{path}:{lineno}: toxicity must be 'toxic' or 'nontoxic', got {toxicity!r}"
            )
        templates.append(Template(id=template_id, pattern=pattern, toxicity=toxicity))

    if not templates:
        raise ValidationError(f"{path}: template file has a header but no templates")
    return templates


def build_evalset(templates: Sequence[Template], lex: Lexicon) -> list[EvalSentence]:
    """Cartesian product, template-major then lexicon order.

    Surfaces are inserted as stored (lowercase); template casing is untouched.
    The result has exactly ``len(templates) * len(lex)`` sentences.
    """
    sentences: list[EvalSentence] = []
    for template in templates:
        for term in lex.terms:
            sentences.append(
                EvalSentence(
                    template_id=template.id,
                    sgt=term,
                    text=template.pattern.replace(SLOT, term.surface),
                    gold=template.toxicity,
                )
            )
    return sentences


def write_evalset(path: str | Path, sentences: Iterable[EvalSentence]) -> int:
    return write_jsonl(
        path,
        (
            {
                "template_id": s.template_id,
                "sgt": s.sgt.surface,
                "category": s.sgt.category,
                "text": s.text,
                "gold": s.gold,
            }
            for s in sentences
        ),
    )


def read_evalset(path: str | Path) -> list[EvalSentence]:
    """Read an evalset JSONL file.

    The file stores surface and category but not pos; reconstructed terms get
    pos "both", which nothing downstream of the evalset consults.
    """
    sentences: list[EvalSentence] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl(path):
        for key in ("template_id", "sgt", "category", "text", "gold"):
            if key not in obj:
                raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
        if obj["category"] not in CATEGORIES:
            raise ValidationError(f"{path}:{lineno}: unknown category {obj['category']!r}")
        if obj["gold"] not in TOXICITY:
            raise ValidationError(f"{path}:{lineno}: unknown gold label {obj['gold']!r}")
        sentence = EvalSentence(
            template_id=obj["template_id"],
            sgt=SocialGroupTerm(surface=obj["sgt"], category=obj["category"], pos="both"),
            text=obj["text"],
            gold=obj["gold"],
        )
        if sentence.key in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate sentence key {sentence.key!r}"
                f" (first at line {seen[sentence.key]})"
            )
        seen[sentence.key] = lineno
        sentences.append(sentence)
    return sentences

"""Counterfactual generation.

Three routes produce variants of a post with its social-group term swapped:

* dictionary substitution (``mgs``): replacements share the original term's
  identity category and grammatical bucket;
* log-likelihood filtering (``sll``): every other lexicon surface is tried,
  category and pos ignored, and a candidate survives when the scorer rates
  it at least as likely as the original (this deliberately reproduces the
  method's known grammar slips, e.g. adjective-for-noun swaps);
* LLM prompting (``llmdef``/``llmlist``): prompts are built here and replies
  parsed here; the model itself is an external chat-completion endpoint or a
  recorded replay file.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .corpus import Post
from .errors import CompletenessError, ParseError, TransportError, ValidationError
from .lexicon import Lexicon, SocialGroupTerm, SubstitutionDictionary, find_sgts
from .scorer import Scorer, score
from .util import post_json_with_retries, read_jsonl, write_jsonl

METHODS = ("mgs", "sll", "llmdef", "llmlist")

INPUT_SLOT = "$input_sentence$"
TERMS_SLOT = "$sgt_terms$"

LLMDEF_PROMPT = (
    "Your task is to generate five counterfactual sentences for a given input"
    " sentence in Dutch. Identify social group terms in the input sentence and"
    " modify the input sentence by changing the social group(s) with other"
    " social group terms.\n"
    "Each counterfactual sentence should differ from the original while"
    " preserving the original meaning.\n"
    "Social group terms are terms that signify social groups based on"
    " characteristics like gender, race, class, sexuality, political leaning,"
    " religion, education, age, profession etc.\n"
    f"Please generate five distinct counterfactual sentences for the input"
    f" sentence: {INPUT_SLOT}\n"
    "Your response should be a JSON list of five dictionaries where each"
    " dictionary contains:\n"
    "- 'input sentence': the original sentence.\n"
    "- 'counterfactual sentence': the generated counterfactual sentence.\n"
)

LLMLIST_PROMPT = (
    "Your task is to generate seven counterfactual sentences for a given input"
    " sentence in Dutch language.\n"
    "Identify and modify the input sentence by changing the social group"
    " term(s) with other social group term(s) and change other words without"
    " changing the level of toxicity expressed in input sentence based on"
    f" {INPUT_SLOT}.\n"
    "The generated sentence should make contextual sense.\n"
    f"Some social group terms in Dutch context are: {TERMS_SLOT}."
    f" Input sentence is: {INPUT_SLOT}.\n"
    'Give your response as a dictionary of "counterfactual sentences" with'
    " consistent formatting.\n"
)


@dataclass(frozen=True)
class SubstitutionRecord:
    """Which term was swapped for which, at what span of the parent text."""

    original: SocialGroupTerm
    replacement: SocialGroupTerm
    start: int
    end: int


@dataclass(frozen=True)
class Counterfactual:
    """A generated variant of a post; the label is inherited from the parent."""

    parent_id: str
    text: str
    label: str
    method: str
    sub: SubstitutionRecord | None = None


def _splice(text: str, start: int, end: int, replacement: str) -> str:
    return text[:start] + replacement + text[end:]


def mgs_generate(
    post: Post, dictionary: SubstitutionDictionary, lex: Lexicon
) -> list[Counterfactual]:
    """Substitute each matched term with every other term in its bucket(s).

    One substitution per counterfactual; other occurrences stay untouched.
    Output is ordered by match offset then bucket order, replacements are
    inserted lowercase, and duplicate texts are dropped keeping the first.
    """
    out: list[Counterfactual] = []
    seen: set[str] = set()
    for match in find_sgts(post.text, lex):
        buckets = dictionary.buckets_for(match.term)
        if not buckets:
            raise ValidationError(
                f"term {match.term.surface!r} is not in the substitution dictionary;"
                " the dictionary was built from a different lexicon"
            )
        for bucket in buckets:
            for replacement in bucket:
                if replacement.surface == match.term.surface:
                    continue
                text = _splice(post.text, match.start, match.end, replacement.surface)
                if text in seen:
                    continue
                seen.add(text)
                out.append(
                    Counterfactual(
                        parent_id=post.id,
                        text=text,
                        label=post.label,
                        method="mgs",
                        sub=SubstitutionRecord(match.term, replacement, match.start, match.end),
                    )
                )
    return out


def sll_generate(post: Post, lex: Lexicon, scorer: Scorer) -> list[Counterfactual]:
    """Try every other lexicon surface per match; keep candidates whose score
    is >= the original's.

    Category and pos are ignored on purpose. Order follows match offset then
    lexicon order; duplicate texts are dropped keeping the first.
    """
    matches = find_sgts(post.text, lex)
    if not matches:
        return []
    baseline = score(scorer, post.text).logprob
    out: list[Counterfactual] = []
    seen: set[str] = set()
    for match in matches:
        for replacement in lex.terms:
            if replacement.surface == match.term.surface:
                continue
            text = _splice(post.text, match.start, match.end, replacement.surface)
            if score(scorer, text).logprob >= baseline:
                if text in seen:
                    continue
                seen.add(text)
                out.append(
                    Counterfactual(
                        parent_id=post.id,
                        text=text,
                        label=post.label,
                        method="sll",
                        sub=SubstitutionRecord(match.term, replacement, match.start, match.end),
                    )
                )
    return out


def build_llmdef_prompt(post: Post) -> str:
    """Fill the free-substitution prompt with the post text (literally)."""
    return LLMDEF_PROMPT.replace(INPUT_SLOT, post.text)


def build_llmlist_prompt(post: Post, lex: Lexicon) -> str:
    """Fill the list-constrained prompt: quoted term enumeration plus text.

    Terms are rendered from the live lexicon in lexicon order, double-quoted
    and comma-separated with an "and" before the last one.
    """
    quoted = [f'"{t.surface}"' for t in lex.terms]
    if len(quoted) == 1:
        enumeration = quoted[0]
    else:
        enumeration = ", ".join(quoted[:-1]) + f", and {quoted[-1]}"
    return LLMLIST_PROMPT.replace(TERMS_SLOT, enumeration).replace(INPUT_SLOT, post.text)


def _first_json_value(raw: str):
    """The first well-formed JSON array/object in a reply, fences and prose
    tolerated, or None."""
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(raw):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(raw, idx)
            except json.JSONDecodeError:
                continue
            return value
    return None


def parse_llm_response(raw: str, method: str, parent: Post) -> list[Counterfactual]:
    """Turn a raw model reply into counterfactuals.

    ``llmdef`` replies are a JSON list of objects carrying a
    "counterfactual sentence" key; ``llmlist`` replies are an object with a
    "counterfactual sentences" collection. Entries equal to the parent text,
    empty, non-string or duplicated are dropped. No substitution record is
    attached: free-form rewrites cannot be aligned to a single span.
    """
    if method not in ("llmdef", "llmlist"):
        raise ValueError(f"not an LLM method: {method!r}")
    value = _first_json_value(raw)
    if value is None:
        raise ParseError(
            f"no parseable JSON value in reply for post {parent.id}", parent_id=parent.id
        )

    texts: list[object]
    if method == "llmdef":
        if not isinstance(value, list):
            raise ValidationError(
                f"llmdef reply for post {parent.id}: expected a JSON list of objects"
            )
        texts = []
        for item in value:
            if not isinstance(item, dict) or "counterfactual sentence" not in item:
                raise ValidationError(
                    f"llmdef reply for post {parent.id}: missing key 'counterfactual sentence'"
                )
            texts.append(item["counterfactual sentence"])
    else:
        if not isinstance(value, dict) or "counterfactual sentences" not in value:
            raise ValidationError(
                f"llmlist reply for post {parent.id}: missing key 'counterfactual sentences'"
            )
        collection = value["counterfactual sentences"]
        if isinstance(collection, dict):
            texts = list(collection.values())
        elif isinstance(collection, (list, tuple)):
            texts = list(collection)
        else:
            raise ValidationError(
                f"llmlist reply for post {parent.id}: 'counterfactual sentences'"
                " must be a list or object"
            )

    out: list[Counterfactual] = []
    seen: set[str] = set()
    for text in texts:
        if not isinstance(text, str) or not text.strip():
            continue
        if text == parent.text or text in seen:
            continue
        seen.add(text)
        out.append(
            Counterfactual(parent_id=parent.id, text=text, label=parent.label, method=method)
        )
    return out


class ReplayLlm:
    """Replays recorded raw replies keyed by (parent_id, method).

    The replay file is JSONL with ``{"parent_id", "method", "raw"}`` records;
    it makes LLM-backed generation reproducible and testable offline.
    """

    def __init__(self, entries: dict[tuple[str, str], str]):
        self._entries = entries

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayLlm":
        entries: dict[tuple[str, str], str] = {}
        for lineno, obj in read_jsonl(path):
            for key in ("parent_id", "method", "raw"):
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
            key = (obj["parent_id"], obj["method"])
            if key in entries:
                raise ValidationError(f"{path}:{lineno}: duplicate replay entry for {key}")
            entries[key] = obj["raw"]
        return cls(entries)

    def reply(self, post: Post, method: str, prompt: str) -> str:
        try:
            return self._entries[(post.id, method)]
        except KeyError:
            raise CompletenessError(
                f"no replay entry for post {post.id!r} method {method!r}", missing=[post.id]
            ) from None


class HttpLlm:
    """Chat-completion client. The API key, if any, comes from the environment."""

    API_KEY_ENV = "CFAUDIT_LLM_API_KEY"

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        temperature: float = 0.7,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ):
        self._endpoint = endpoint
        self._model = model
        self._temperature = temperature
        self._timeout = timeout
        self._max_retries = max_retries
        self._backoff = backoff
        self._session = session or requests.Session()
        api_key = os.environ.get(self.API_KEY_ENV)
        if api_key:
            self._session.headers["Authorization"] = f"Bearer {api_key}"

    def reply(self, post: Post, method: str, prompt: str) -> str:
        body = post_json_with_retries(
            self._session,
            self._endpoint,
            {
                "model": self._model,
                "temperature": self._temperature,
                "messages": [{"role": "user", "content": prompt}],
            },
            timeout=self._timeout,
            max_retries=self._max_retries,
            backoff=self._backoff,
            request_id=post.id,
        )
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(
                f"malformed completion reply for post {post.id}", request_id=post.id
            ) from None
        if not isinstance(content, str):
            raise TransportError(
                f"completion content for post {post.id} is not a string", request_id=post.id
            )
        return content


def generate_for_post(
    post: Post,
    method: str,
    *,
    lex: Lexicon,
    dictionary: SubstitutionDictionary | None = None,
    scorer: Scorer | None = None,
    llm=None,
) -> list[Counterfactual]:
    if method == "mgs":
        if dictionary is None:
            raise ValueError("mgs needs a substitution dictionary")
        return mgs_generate(post, dictionary, lex)
    if method == "sll":
        if scorer is None:
            raise ValueError("sll needs a scorer")
        return sll_generate(post, lex, scorer)
    if method in ("llmdef", "llmlist"):
        if llm is None:
            raise ValueError(f"{method} needs an LLM backend (endpoint or replay file)")
        prompt = (
            build_llmdef_prompt(post) if method == "llmdef" else build_llmlist_prompt(post, lex)
        )
        raw = llm.reply(post, method, prompt)
        return parse_llm_response(raw, method, post)
    raise ValueError(f"unknown method {method!r}")


def generate_batch(
    posts: Sequence[Post],
    method: str,
    *,
    lex: Lexicon,
    dictionary: SubstitutionDictionary | None = None,
    scorer: Scorer | None = None,
    llm=None,
    max_workers: int = 1,
) -> tuple[list[Counterfactual], list[dict]]:
    """Generate for many posts, in parallel, with per-post error records.

    A failing post does not abort the batch; its error lands in the second
    return value. Results come back in input post order regardless of the
    worker count, so output files are canonical.
    """
    results: list[list[Counterfactual] | None] = [None] * len(posts)
    errors: list[dict | None] = [None] * len(posts)

    def run(index: int) -> None:
        post = posts[index]
        try:
            results[index] = generate_for_post(
                post, method, lex=lex, dictionary=dictionary, scorer=scorer, llm=llm
            )
        except (ValidationError, TransportError, CompletenessError) as exc:
            errors[index] = {
                "parent_id": post.id,
                "method": method,
                "error": type(exc).__name__,
                "message": str(exc),
            }

    if max_workers <= 1:
        for i in range(len(posts)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(run, range(len(posts))))

    flat = [cf for chunk in results if chunk for cf in chunk]
    return flat, [e for e in errors if e is not None]


def counterfactual_record(cf: Counterfactual) -> dict:
    record: dict = {
        "parent_id": cf.parent_id,
        "text": cf.text,
        "label": cf.label,
        "method": cf.method,
    }
    if cf.sub is not None:
        record["sub"] = {
            "original": cf.sub.original.surface,
            "replacement": cf.sub.replacement.surface,
            "start": cf.sub.start,
            "end": cf.sub.end,
        }
    return record


def write_counterfactuals(path: str | Path, cfs: Iterable[Counterfactual]) -> int:
    return write_jsonl(path, (counterfactual_record(cf) for cf in cfs))


def summarize_counterfactuals(cfs: Sequence[Counterfactual], lex: Lexicon) -> dict:
    """Per-label and per-(label, category) counts of generated texts.

    A counterfactual counts once per distinct SGT category found in its text,
    so the category table also covers LLM outputs with no substitution record.
    """
    per_label: dict[str, int] = {}
    per_label_category: dict[str, dict[str, int]] = {}
    for cf in cfs:
        per_label[cf.label] = per_label.get(cf.label, 0) + 1
        categories = {m.term.category for m in find_sgts(cf.text, lex)}
        bucket = per_label_category.setdefault(cf.label, {})
        for category in sorted(categories):
            bucket[category] = bucket.get(category, 0) + 1
    return {
        "total": len(cfs),
        "per_label": dict(sorted(per_label.items())),
        "per_label_category": {
            label: dict(sorted(cats.items())) for label, cats in sorted(per_label_category.items())
        },
    }

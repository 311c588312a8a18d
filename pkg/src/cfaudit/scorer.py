"""Sentence log-likelihood scoring.

A sentence score is the chain-rule sum of per-token conditional log
probabilities (natural log). The built-in add-alpha n-gram model is the
desk-scale reference scorer; neural scorers attach through a line-delimited
stdio protocol or a small HTTP protocol, both carrying
``{"id", "text"} -> {"id", "logprob"} | {"id", "error"}`` messages.

Scores are raw sums, not length-normalized: counterfactual filtering only
compares scores of same-shaped sentences, and one-token substitutions keep
the token count fixed under whitespace tokenization. External subword
scorers may shift token counts between candidates; see README.
"""
from __future__ import annotations

import itertools
import json
import math
import subprocess
import threading
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import requests

from .errors import TransportError
from .util import post_json_with_retries

START = "<s>"
END = "</s>"
UNK = "<unk>"


@dataclass(frozen=True)
class SentenceScore:
    text: str
    logprob: float


class Scorer(Protocol):
    def logprob(self, text: str) -> float: ...


def _tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class NgramModel:
    """Add-alpha smoothed n-gram model over lowercase whitespace tokens.

    Sentences are padded with ``order - 1`` start symbols and one end symbol.
    The event space is ``vocab | {UNK}``, so conditional probabilities per
    context sum to one and unseen tokens get a finite smoothed score.
    Immutable after training; safe for concurrent scoring.
    """

    order: int
    counts: dict[tuple[tuple[str, ...], str], int]
    context_totals: dict[tuple[str, ...], int]
    vocab: frozenset[str]
    alpha: float

    def cond_prob(self, context: tuple[str, ...], token: str) -> float:
        """P(token | context) with add-alpha smoothing over vocab plus UNK."""
        if token not in self.vocab:
            token = UNK
        numerator = self.counts.get((context, token), 0) + self.alpha
        denominator = self.context_totals.get(context, 0) + self.alpha * (len(self.vocab) + 1)
        return numerator / denominator

    def logprob(self, text: str) -> float:
        tokens = _tokenize(text)
        if not tokens:
            raise ValueError("cannot score a text with no tokens")
        events = [t if t in self.vocab else UNK for t in tokens] + [END]
        history = [START] * (self.order - 1)
        total = 0.0
        for token in events:
            context = tuple(history[len(history) - self.order + 1 :]) if self.order > 1 else ()
            total += math.log(self.cond_prob(context, token))
            history.append(token)
        return total


def ngram_train(sentences: Sequence[str], order: int = 2, alpha: float = 1.0) -> NgramModel:
    """Count n-grams over a corpus of sentences.

    Tokens are lowercased whitespace splits; empty sentences are ignored and
    an entirely empty corpus is an error.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    tokenized = [toks for toks in (_tokenize(s) for s in sentences) if toks]
    if not tokenized:
        raise ValueError("cannot train on an empty corpus")

    vocab = {tok for toks in tokenized for tok in toks}
    vocab.add(END)
    counts: dict[tuple[tuple[str, ...], str], int] = {}
    context_totals: dict[tuple[str, ...], int] = {}
    for toks in tokenized:
        seq = [START] * (order - 1) + toks + [END]
        for i in range(order - 1, len(seq)):
            context = tuple(seq[i - order + 1 : i])
            token = seq[i]
            counts[(context, token)] = counts.get((context, token), 0) + 1
            context_totals[context] = context_totals.get(context, 0) + 1
    return NgramModel(
        order=order,
        counts=counts,
        context_totals=context_totals,
        vocab=frozenset(vocab),
        alpha=alpha,
    )


def score(scorer: Scorer, text: str) -> SentenceScore:
    """Score a sentence with any scorer backend."""
    if not text.split():
        raise ValueError("cannot score a text with no tokens")
    return SentenceScore(text=text, logprob=scorer.logprob(text))


@dataclass(frozen=True)
class ConstantScorer:
    """Returns the same log probability for every text (testing aid)."""

    value: float = 0.0

    def logprob(self, text: str) -> float:
        return self.value


def _wire_logprob(obj: dict, request_id: str) -> float:
    if obj.get("error") is not None:
        raise TransportError(f"scorer error: {obj['error']}", request_id=request_id)
    value = obj.get("logprob")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TransportError("scorer reply missing numeric 'logprob'", request_id=request_id)
    return float(value)


class StdioScorerClient:
    """Talks line-delimited JSON to a scorer subprocess.

    Requests may be in flight concurrently; replies are routed back to
    callers by id, so reply order does not matter.
    """

    def __init__(self, cmd: Sequence[str]):
        self._proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._ids = itertools.count()
        self._lock = threading.Lock()
        self._pending: dict[str, Future] = {}
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                self._fail_pending("malformed scorer reply line")
                return
            request_id = obj.get("id")
            with self._lock:
                fut = self._pending.pop(request_id, None)
            if fut is None:
                continue
            try:
                fut.set_result(_wire_logprob(obj, request_id))
            except TransportError as exc:
                fut.set_exception(exc)
        self._fail_pending("scorer process closed its output")

    def _fail_pending(self, reason: str) -> None:
        with self._lock:
            pending, self._pending = self._pending, {}
        for request_id, fut in pending.items():
            fut.set_exception(TransportError(reason, request_id=request_id))

    def logprob(self, text: str) -> float:
        request_id = f"q{next(self._ids)}"
        fut: Future = Future()
        with self._lock:
            if self._proc.poll() is not None:
                raise TransportError("scorer process is not running", request_id=request_id)
            self._pending[request_id] = fut
            assert self._proc.stdin is not None
            try:
                self._proc.stdin.write(json.dumps({"id": request_id, "text": text}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._pending.pop(request_id, None)
                raise TransportError(f"scorer pipe broken: {exc}", request_id=request_id) from exc
        return fut.result()

    def close(self) -> None:
        if self._proc.poll() is None:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self) -> "StdioScorerClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class HttpScorerClient:
    """POSTs score requests to ``/score`` (or ``/score_batch``) on an endpoint."""

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ):
        self._base = endpoint.rstrip("/")
        self._timeout = timeout
        self._max_retries = max_retries
        self._backoff = backoff
        self._session = session or requests.Session()
        self._ids = itertools.count()

    def logprob(self, text: str) -> float:
        request_id = f"q{next(self._ids)}"
        body = post_json_with_retries(
            self._session,
            f"{self._base}/score",
            {"id": request_id, "text": text},
            timeout=self._timeout,
            max_retries=self._max_retries,
            backoff=self._backoff,
            request_id=request_id,
        )
        if body.get("id") != request_id:
            raise TransportError("scorer reply id does not match request", request_id=request_id)
        return _wire_logprob(body, request_id)

    def logprob_batch(self, texts: Sequence[str]) -> list[float]:
        items = [{"id": f"q{next(self._ids)}", "text": t} for t in texts]
        body = post_json_with_retries(
            self._session,
            f"{self._base}/score_batch",
            {"items": items},
            timeout=self._timeout,
            max_retries=self._max_retries,
            backoff=self._backoff,
        )
        replies = body.get("items")
        if not isinstance(replies, list):
            raise TransportError("batch reply missing 'items' list")
        by_id = {}
        for obj in replies:
            if not isinstance(obj, dict) or "id" not in obj:
                raise TransportError("batch reply item without id")
            by_id[obj["id"]] = obj
        out = []
        for item in items:
            obj = by_id.get(item["id"])
            if obj is None:
                raise TransportError("batch reply missing an item", request_id=item["id"])
            out.append(_wire_logprob(obj, item["id"]))
        return out

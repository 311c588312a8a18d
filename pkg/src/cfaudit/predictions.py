"""Classifier output ingestion and label binarization.

Predictions arrive either from a JSONL file or from a classifier HTTP
endpoint (``POST /classify`` and ``POST /classify_batch``). The four hate
labels binarize as: appropriate and inappropriate are non-toxic, offensive
and violent are toxic.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .corpus import LABELS
from .errors import CompletenessError, TransportError, ValidationError
from .util import post_json_with_retries, read_jsonl, write_jsonl

BINARY_OF = {
    "appropriate": "nontoxic",
    "inappropriate": "nontoxic",
    "offensive": "toxic",
    "violent": "toxic",
}

_PROB_SUM_TOL = 1e-6


def binarize(label4: str) -> str:
    """Map a 4-class label to toxic/nontoxic."""
    try:
        return BINARY_OF[label4]
    except KeyError:
        raise ValidationError(f"unknown label {label4!r}") from None


@dataclass(frozen=True)
class Prediction:
    """One classifier output: a 4-class label, optionally with probabilities.

    When probabilities are present they must form a distribution whose argmax
    (ties broken by class order appropriate < inappropriate < offensive <
    violent) matches the label.
    """

    id: str
    label4: str
    probs: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.label4 not in LABELS:
            raise ValidationError(f"prediction {self.id!r}: unknown label {self.label4!r}")
        if self.probs is None:
            return
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != 4:
            raise ValidationError(f"prediction {self.id!r}: probs must have 4 entries")
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValidationError(f"prediction {self.id!r}: probs must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > _PROB_SUM_TOL:
            raise ValidationError(f"prediction {self.id!r}: probs must sum to 1")
        argmax_label = LABELS[max(range(4), key=lambda i: (probs[i], -i))]
        if argmax_label != self.label4:
            raise ValidationError(
                f"prediction {self.id!r}: label {self.label4!r} does not match"
                f" probs argmax {argmax_label!r}"
            )

    @property
    def binary(self) -> str:
        return binarize(self.label4)

    def toxic_probability(self) -> float:
        """Probability mass on the toxic classes (offensive + violent)."""
        if self.probs is None:
            raise ValidationError(f"prediction {self.id!r} carries no probabilities")
        return self.probs[2] + self.probs[3]


def read_predictions(path: str | Path) -> list[Prediction]:
    predictions: list[Prediction] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl(path):
        for key in ("id", "label"):
            if key not in obj:
                raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
        if obj["id"] in seen:
            raise ValidationError(
                f"{path}:{lineno}: duplicate prediction id {obj['id']!r}"
                f" (first at line {seen[obj['id']]})"
            )
        seen[obj["id"]] = lineno
        probs = obj.get("probs")
        try:
            predictions.append(
                Prediction(
                    id=obj["id"],
                    label4=obj["label"],
                    probs=tuple(probs) if probs is not None else None,
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return predictions


def write_predictions(path: str | Path, predictions: Iterable[Prediction]) -> int:
    def record(p: Prediction) -> dict:
        rec: dict = {"id": p.id, "label": p.label4}
        if p.probs is not None:
            rec["probs"] = list(p.probs)
        return rec

    return write_jsonl(path, (record(p) for p in predictions))


def match_predictions(ids: Sequence[str], predictions: Sequence[Prediction]) -> list[Prediction]:
    """Re-order predictions to follow ``ids``; the sets must match exactly."""
    by_id: dict[str, Prediction] = {}
    for p in predictions:
        if p.id in by_id:
            raise ValidationError(f"duplicate prediction id {p.id!r}")
        by_id[p.id] = p
    wanted = set(ids)
    missing = [i for i in ids if i not in by_id]
    extra = [p.id for p in predictions if p.id not in wanted]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {len(missing)} id(s): {_preview(missing)}")
        if extra:
            parts.append(f"{len(extra)} unexpected id(s): {_preview(extra)}")
        raise CompletenessError(
            "predictions do not cover the sentence set: " + "; ".join(parts),
            missing=missing,
            extra=extra,
        )
    return [by_id[i] for i in ids]


def _preview(ids: Sequence[str], limit: int = 10) -> str:
    shown = ", ".join(repr(i) for i in ids[:limit])
    return shown + (", ..." if len(ids) > limit else "")


class ClassifierHttpClient:
    """Client for the classifier protocol with retries and bounded fan-out."""

    API_KEY_ENV = "CFAUDIT_CLASSIFIER_API_KEY"

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.25,
        session: requests.Session | None = None,
    ):
        import os

        self._base = endpoint.rstrip("/")
        self._timeout = timeout
        self._max_retries = max_retries
        self._backoff = backoff
        self._session = session or requests.Session()
        api_key = os.environ.get(self.API_KEY_ENV)
        if api_key:
            self._session.headers["Authorization"] = f"Bearer {api_key}"

    def _to_prediction(self, obj: object, request_id: str) -> Prediction:
        if not isinstance(obj, dict) or "id" not in obj or "label" not in obj:
            raise TransportError("classifier reply missing id/label", request_id=request_id)
        probs = obj.get("probs")
        try:
            return Prediction(
                id=obj["id"],
                label4=obj["label"],
                probs=tuple(probs) if probs is not None else None,
            )
        except ValidationError as exc:
            raise TransportError(f"bad classifier reply: {exc}", request_id=request_id) from None

    def classify(self, item_id: str, text: str) -> Prediction:
        body = post_json_with_retries(
            self._session,
            f"{self._base}/classify",
            {"id": item_id, "text": text},
            timeout=self._timeout,
            max_retries=self._max_retries,
            backoff=self._backoff,
            request_id=item_id,
        )
        prediction = self._to_prediction(body, item_id)
        if prediction.id != item_id:
            raise TransportError("classifier reply id does not match request", request_id=item_id)
        return prediction

    def classify_batch(self, items: Sequence[tuple[str, str]]) -> list[Prediction]:
        body = post_json_with_retries(
            self._session,
            f"{self._base}/classify_batch",
            {"items": [{"id": i, "text": t} for i, t in items]},
            timeout=self._timeout,
            max_retries=self._max_retries,
            backoff=self._backoff,
        )
        replies = body.get("items")
        if not isinstance(replies, list):
            raise TransportError("batch reply missing 'items' list")
        predictions = [self._to_prediction(obj, "batch") for obj in replies]
        return match_predictions([i for i, _ in items], predictions)

    def classify_many(
        self,
        items: Sequence[tuple[str, str]],
        *,
        max_workers: int = 4,
        batch_size: int | None = None,
    ) -> list[Prediction]:
        """Classify many (id, text) pairs, returning them in input order."""
        if batch_size:
            out: list[Prediction] = []
            for i in range(0, len(items), batch_size):
                out.extend(self.classify_batch(items[i : i + batch_size]))
            return out
        if max_workers <= 1:
            return [self.classify(i, t) for i, t in items]
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda it: self.classify(*it), items))


def fetch_predictions(
    sentences: Sequence[tuple[str, str]],
    *,
    predictions_path: str | Path | None = None,
    client: ClassifierHttpClient | None = None,
    max_workers: int = 4,
    batch_size: int | None = None,
) -> list[Prediction]:
    """One prediction per (id, text) pair, in input order.

    File mode validates completeness: every id covered, no extras. Endpoint
    mode fans out with bounded concurrency and re-orders canonically.
    """
    if (predictions_path is None) == (client is None):
        raise ValueError("supply exactly one of predictions_path or client")
    ids = [i for i, _ in sentences]
    if predictions_path is not None:
        return match_predictions(ids, read_predictions(predictions_path))
    assert client is not None
    fetched = client.classify_many(sentences, max_workers=max_workers, batch_size=batch_size)
    return match_predictions(ids, fetched)

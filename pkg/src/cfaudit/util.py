"""Small shared helpers: JSONL io, hashing, HTTP with retries."""
from __future__ import annotations

import hashlib
import json
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import requests

from .errors import TransportError, ValidationError


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, object) pairs; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def write_json(path: str | Path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


def write_meta(out_path: str | Path, inputs: Mapping[str, str | Path], **extra: Any) -> Path:
    """Write a `<out>.meta.json` sidecar with input digests and a timestamp.

    Output files keep their documented line schema; provenance lives next to
    them so re-runs are diffable (only the timestamp changes).
    """
    meta = {
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()
        },
        **extra,
        "timestamp": utc_timestamp(),
    }
    meta_path = Path(f"{out_path}.meta.json")
    write_json(meta_path, meta)
    return meta_path


def post_json_with_retries(
    session: requests.Session,
    url: str,
    payload: Mapping[str, Any],
    *,
    timeout: float = 30.0,
    max_retries: int = 3,
    backoff: float = 0.25,
    request_id: str | None = None,
) -> dict:
    """POST a JSON body and return the parsed JSON object reply.

    Connection failures and 5xx replies are retried with exponential backoff
    (requests are idempotent); 4xx and malformed bodies fail immediately.
    """
    last_error: Exception | None = None
    for attempt in range(max(1, max_retries)):
        try:
            resp = session.post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
        else:
            if resp.status_code >= 500:
                last_error = TransportError(
                    f"server error {resp.status_code} from {url}", request_id=request_id
                )
            elif resp.status_code >= 400:
                raise TransportError(
                    f"request rejected ({resp.status_code}) by {url}: {resp.text[:200]}",
                    request_id=request_id,
                )
            else:
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise TransportError(
                        f"malformed JSON reply from {url}: {exc}", request_id=request_id
                    ) from exc
                if not isinstance(body, dict):
                    raise TransportError(
                        f"expected a JSON object reply from {url}", request_id=request_id
                    )
                return body
        if attempt + 1 < max_retries:
            time.sleep(backoff * (2**attempt))
    raise TransportError(
        f"gave up on {url} after {max_retries} attempts: {last_error}", request_id=request_id
    )

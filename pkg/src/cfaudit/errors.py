"""Exception types shared across the toolkit."""
from __future__ import annotations

from typing import Iterable


class ValidationError(Exception):
    """Input data breaks a format rule or an invariant.

    Messages name the offending file/line or record wherever possible so the
    CLI can point the user at the exact row to fix.
    """


class ParseError(ValidationError):
    """A free-form model reply held no usable JSON value."""

    def __init__(self, message: str, parent_id: str | None = None):
        super().__init__(message)
        self.parent_id = parent_id


class TransportError(Exception):
    """A remote call failed: unreachable endpoint, bad reply, retries exhausted."""

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class CompletenessError(Exception):
    """An id set does not line up (e.g. predictions must cover every sentence exactly once)."""

    def __init__(self, message: str, missing: Iterable[str] = (), extra: Iterable[str] = ()):
        super().__init__(message)
        self.missing = list(missing)
        self.extra = list(extra)

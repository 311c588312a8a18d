"""Run configuration: one JSON file of defaults, command-line flags win.

Secrets never live in the config file; API keys are read from the
environment (``CFAUDIT_LLM_API_KEY``, ``CFAUDIT_CLASSIFIER_API_KEY``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError


@dataclass
class RunConfig:
    """Every knob the CLI accepts; field names double as config keys."""

    lexicon: str | None = None
    templates: str | None = None
    corpus: str | None = None
    output_dir: str = "."
    # scorer backend: exactly one of ngram_train / scorer_endpoint / scorer_cmd
    ngram_train: str | None = None
    ngram_order: int = 2
    ngram_alpha: float = 1.0
    scorer_endpoint: str | None = None
    scorer_cmd: list[str] | None = None
    # LLM backend: replay file or chat-completion endpoint
    llm_replay: str | None = None
    llm_endpoint: str | None = None
    llm_model: str | None = None
    llm_temperature: float = 0.7
    classifier_endpoint: str | None = None
    max_workers: int = 4
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.25
    seed: int = 0  # reserved; the pipeline is deterministic


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON config: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    unknown = sorted(set(obj) - CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return obj


def apply_config(args, config: dict) -> None:
    """Fill unset argparse attributes from a config dict; flags always win."""
    for key, value in config.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)


def finalize_defaults(args) -> None:
    """Backfill anything still unset with the RunConfig defaults."""
    defaults = RunConfig()
    for f in fields(RunConfig):
        if hasattr(args, f.name) and getattr(args, f.name) is None:
            setattr(args, f.name, getattr(defaults, f.name))

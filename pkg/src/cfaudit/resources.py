"""Paths to the data files shipped inside the package."""
from __future__ import annotations

from importlib.resources import files
from pathlib import Path


def shipped_lexicon_path() -> Path:
    return Path(str(files("cfaudit").joinpath("data/sgt_nl.csv")))


def shipped_templates_path() -> Path:
    return Path(str(files("cfaudit").joinpath("data/templates_nl.csv")))

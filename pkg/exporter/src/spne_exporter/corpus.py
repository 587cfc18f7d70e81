"""Minimal corpus reading: sentence ids and token lists.

The exporter only needs to know which tokens to encode; entity
annotations in the corpus are never interpreted here and pass through
the pipeline untouched.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

__all__ = ["CorpusError", "CorpusSentence", "read_corpus"]


class CorpusError(ValueError):
    """Malformed corpus input; messages carry the offending line number."""


@dataclass(frozen=True)
class CorpusSentence:
    id: str
    tokens: tuple[str, ...]


def read_corpus(path: str | Path) -> list[CorpusSentence]:
    """Parse corpus JSONL, keeping file order. Ids must be unique."""
    sentences: list[CorpusSentence] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"line {lineno}: invalid JSON: {err}") from err
            if not isinstance(record, dict):
                raise CorpusError(f"line {lineno}: expected an object")
            sid = record.get("id")
            if not isinstance(sid, str) or not sid:
                raise CorpusError(f"line {lineno}: missing or empty 'id'")
            if sid in seen:
                raise CorpusError(f"line {lineno}: duplicate sentence id {sid!r}")
            seen.add(sid)
            tokens = record.get("tokens")
            if (
                not isinstance(tokens, list)
                or not tokens
                or not all(isinstance(t, str) for t in tokens)
            ):
                raise CorpusError(
                    f"line {lineno}: 'tokens' must be a non-empty list of strings"
                )
            sentences.append(CorpusSentence(id=sid, tokens=tuple(tokens)))
    if not sentences:
        raise CorpusError(f"{path}: corpus contains no sentences")
    return sentences

"""Corpus model and episodic sampling for span-annotated sentences.

A corpus is line-oriented JSON: one object per line with keys ``id``
(string), ``tokens`` (non-empty list of strings) and ``entities`` (list of
``{"start": int, "end": int, "type": str}``). Span positions are 1-based
and inclusive at both ends, so a span covering the first two tokens is
``(1, 2)``. Spans may nest and overlap freely.
"""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

NON_ENTITY = "O"

__all__ = [
    "NON_ENTITY",
    "SpanAnnotation",
    "Sentence",
    "LabelSet",
    "Episode",
    "CorpusFormatError",
    "SpanValidationError",
    "SamplingError",
    "parse_corpus",
    "load_corpus",
    "serialize_corpus",
    "write_corpus",
    "enumerate_spans",
    "annotation_index",
    "label_span_counts",
    "sample_episode",
    "build_support_set",
]


class CorpusFormatError(ValueError):
    """Raised for records that are not valid corpus JSON."""


class SpanValidationError(ValueError):
    """Raised for structurally valid records with out-of-contract spans."""


class SamplingError(RuntimeError):
    """Raised when a pool cannot satisfy an episode or support request."""


@dataclass(frozen=True)
class SpanAnnotation:
    """A labeled token span, 1-based and inclusive."""

    start: int
    end: int
    label: str

    def __post_init__(self):
        if self.start < 1 or self.end < self.start:
            raise SpanValidationError(
                f"span ({self.start}, {self.end}) violates 1 <= start <= end"
            )
        if not self.label or self.label == NON_ENTITY:
            raise SpanValidationError(
                f"annotation label must be non-empty and distinct from {NON_ENTITY!r}"
            )


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence with nested span annotations.

    Annotations must lie inside the token range and exact duplicates
    (same start, end and label) are rejected. Distinct labels on the same
    span are allowed.
    """

    id: str
    tokens: tuple[str, ...]
    annotations: tuple[SpanAnnotation, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise SpanValidationError("sentence id must be non-empty")
        if len(self.tokens) < 1:
            raise SpanValidationError(f"sentence {self.id!r} has no tokens")
        n = len(self.tokens)
        seen = set()
        for ann in self.annotations:
            if ann.end > n:
                raise SpanValidationError(
                    f"sentence {self.id!r}: span ({ann.start}, {ann.end}) exceeds length {n}"
                )
            key = (ann.start, ann.end, ann.label)
            if key in seen:
                raise SpanValidationError(
                    f"sentence {self.id!r}: duplicate annotation {key}"
                )
            seen.add(key)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabelSet:
    """Lexicographically ordered set of entity labels (never the O sentinel)."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if list(self.labels) != sorted(set(self.labels)):
            raise SpanValidationError("label set must be sorted and duplicate-free")
        if NON_ENTITY in self.labels:
            raise SpanValidationError(f"label set must not contain {NON_ENTITY!r}")

    @classmethod
    def of(cls, labels: Iterable[str]) -> "LabelSet":
        return cls(tuple(sorted(set(labels))))

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Episode:
    """An N-way K-shot episode: disjoint support/query sentences over one label set."""

    way: int
    shot: int
    support: tuple[Sentence, ...]
    query: tuple[Sentence, ...]
    label_set: LabelSet

    def __post_init__(self):
        if self.way < 1 or self.shot < 1:
            raise SpanValidationError("way and shot must be >= 1")
        if len(self.label_set) != self.way:
            raise SpanValidationError(
                f"label set size {len(self.label_set)} != way {self.way}"
            )
        support_ids = {s.id for s in self.support}
        query_ids = {s.id for s in self.query}
        overlap = support_ids & query_ids
        if overlap:
            raise SpanValidationError(f"support/query share sentence ids: {sorted(overlap)}")
        counts = label_span_counts(self.support)
        for label in self.label_set:
            if counts.get(label, 0) < self.shot:
                raise SpanValidationError(
                    f"label {label!r} has {counts.get(label, 0)} support spans, needs >= {self.shot}"
                )
        for sent in self.query:
            for ann in sent.annotations:
                if ann.label not in self.label_set:
                    raise SpanValidationError(
                        f"query sentence {sent.id!r} carries out-of-episode label {ann.label!r}"
                    )


def _sentence_from_record(record: dict, where: str) -> Sentence:
    if not isinstance(record, dict):
        raise CorpusFormatError(f"{where}: record is not a JSON object")
    sid = record.get("id")
    tokens = record.get("tokens")
    entities = record.get("entities", [])
    if not isinstance(sid, str):
        raise CorpusFormatError(f"{where}: 'id' must be a string")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise CorpusFormatError(f"{where}: 'tokens' must be a list of strings")
    if not isinstance(entities, list):
        raise CorpusFormatError(f"{where}: 'entities' must be a list")
    anns = []
    for ent in entities:
        if not isinstance(ent, dict):
            raise CorpusFormatError(f"{where}: entity entries must be objects")
        try:
            start, end, label = ent["start"], ent["end"], ent["type"]
        except KeyError as exc:
            raise CorpusFormatError(f"{where}: entity missing key {exc}") from exc
        if not isinstance(start, int) or not isinstance(end, int) or not isinstance(label, str):
            raise CorpusFormatError(f"{where}: entity fields have wrong types")
        anns.append((start, end, label))
    try:
        return Sentence(
            id=sid,
            tokens=tuple(tokens),
            annotations=tuple(SpanAnnotation(s, e, t) for s, e, t in anns),
        )
    except SpanValidationError as exc:
        raise SpanValidationError(f"{where}: {exc}") from exc


def parse_corpus(lines: Iterable[str]) -> list[Sentence]:
    """Parse line-oriented JSON into sentences.

    Errors carry the 1-based line number: malformed JSON or wrong field
    types raise CorpusFormatError, out-of-contract spans raise
    SpanValidationError.
    """
    sentences = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        sentences.append(_sentence_from_record(record, f"line {lineno}"))
    return sentences


def load_corpus(path: str | Path) -> list[Sentence]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus(fh)


def sentence_to_record(sentence: Sentence) -> dict:
    return {
        "id": sentence.id,
        "tokens": list(sentence.tokens),
        "entities": [
            {"start": a.start, "end": a.end, "type": a.label}
            for a in sentence.annotations
        ],
    }


def serialize_corpus(sentences: Iterable[Sentence]) -> Iterator[str]:
    """Yield one JSON line per sentence; inverse of parse_corpus."""
    for sent in sentences:
        yield json.dumps(sentence_to_record(sent), ensure_ascii=False)


def write_corpus(path: str | Path, sentences: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in serialize_corpus(sentences):
            fh.write(line + "\n")


def enumerate_spans(sentence: Sentence, max_len: int = 16) -> list[tuple[int, int]]:
    """All candidate spans up to max_len tokens, ordered by (start, end)."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    n = len(sentence.tokens)
    return [
        (p, q)
        for p in range(1, n + 1)
        for q in range(p, min(n, p + max_len - 1) + 1)
    ]


def annotation_index(sentence: Sentence) -> dict[tuple[int, int], str]:
    """Map (start, end) to its label; when one span carries several labels
    the first annotation wins."""
    index: dict[tuple[int, int], str] = {}
    for ann in sentence.annotations:
        index.setdefault((ann.start, ann.end), ann.label)
    return index


def label_span_counts(sentences: Iterable[Sentence]) -> Counter:
    counts: Counter = Counter()
    for sent in sentences:
        for ann in sent.annotations:
            counts[ann.label] += 1
    return counts


def _distinct_sentence_counts(sentences: Iterable[Sentence]) -> Counter:
    counts: Counter = Counter()
    for sent in sentences:
        for label in {a.label for a in sent.annotations}:
            counts[label] += 1
    return counts


def _greedy_fill(
    candidates: Sequence[Sentence],
    labels: Sequence[str],
    shot: int,
    cap: int,
) -> tuple[list[Sentence], Counter]:
    """Add sentences until every label reaches `shot` spans, skipping any
    sentence that would push a label past `cap`."""
    chosen: list[Sentence] = []
    counts: Counter = Counter()
    targets = set(labels)
    for sent in candidates:
        if all(counts[lab] >= shot for lab in targets):
            break
        contrib = Counter(a.label for a in sent.annotations)
        if any(counts[lab] + contrib.get(lab, 0) > cap for lab in targets):
            continue
        if not any(counts[lab] < shot and contrib.get(lab, 0) > 0 for lab in targets):
            continue
        chosen.append(sent)
        counts.update(contrib)
    return chosen, counts


def sample_episode(pool: Sequence[Sentence], way: int, shot: int, rng_seed: int) -> Episode:
    """Sample an N-way K-shot episode from a sentence pool.

    Labels are drawn from those with at least 2*shot annotated spans spread
    over at least two sentences. Support and query sentences are collected
    greedily in a seeded shuffle order; each keeps per-label span counts in
    [shot, 2*shot] and the two sets never share a sentence id. Candidate
    sentences whose annotations stray outside the sampled label set are
    excluded so episode labels are closed under both halves.
    """
    if way < 1 or shot < 1:
        raise ValueError("way and shot must be >= 1")
    rng = random.Random(rng_seed)
    span_counts = label_span_counts(pool)
    sent_counts = _distinct_sentence_counts(pool)
    eligible = sorted(
        lab
        for lab in span_counts
        if span_counts[lab] >= 2 * shot and sent_counts[lab] >= 2
    )
    if len(eligible) < way:
        short = sorted(set(span_counts) - set(eligible)) or ["<none>"]
        raise SamplingError(
            f"pool has {len(eligible)} episode-eligible labels, need {way}; "
            f"deficient labels: {', '.join(short)}"
        )
    labels = sorted(rng.sample(eligible, way))
    label_set = LabelSet.of(labels)

    candidates = [
        s
        for s in pool
        if s.annotations
        and all(a.label in label_set for a in s.annotations)
    ]
    rng.shuffle(candidates)

    support, sup_counts = _greedy_fill(candidates, labels, shot, 2 * shot)
    for lab in labels:
        if sup_counts[lab] < shot:
            raise SamplingError(
                f"could not reach {shot} support spans for label {lab!r} "
                f"(got {sup_counts[lab]})"
            )
    taken = {s.id for s in support}
    rest = [s for s in candidates if s.id not in taken]
    query, qry_counts = _greedy_fill(rest, labels, shot, 2 * shot)
    for lab in labels:
        if qry_counts[lab] < 1:
            raise SamplingError(
                f"could not draw any query span for label {lab!r} after support selection"
            )
    return Episode(
        way=way,
        shot=shot,
        support=tuple(support),
        query=tuple(query),
        label_set=label_set,
    )


def build_support_set(
    pool: Sequence[Sentence], shot: int, rng_seed: int
) -> tuple[list[Sentence], list[Sentence]]:
    """Sample a fine-tuning support set covering every pool label with at
    least `shot` spans; returns (support, rest). Sentences carry whole
    annotation sets, so per-label counts may overshoot `shot`."""
    if shot < 1:
        raise ValueError("shot must be >= 1")
    counts = label_span_counts(pool)
    if not counts:
        raise SamplingError("pool has no annotated spans")
    deficient = sorted(lab for lab, c in counts.items() if c < shot)
    if deficient:
        raise SamplingError(
            f"labels below {shot} spans in pool: {', '.join(deficient)}"
        )
    labels = sorted(counts)
    rng = random.Random(rng_seed)
    shuffled = list(pool)
    rng.shuffle(shuffled)
    chosen: list[Sentence] = []
    have: Counter = Counter()
    for sent in shuffled:
        if all(have[lab] >= shot for lab in labels):
            break
        contrib = Counter(a.label for a in sent.annotations)
        if not any(have[lab] < shot and contrib.get(lab, 0) > 0 for lab in labels):
            continue
        chosen.append(sent)
        have.update(contrib)
    taken = {s.id for s in chosen}
    rest = [s for s in pool if s.id not in taken]
    return chosen, rest

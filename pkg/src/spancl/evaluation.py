"""Exact-match span evaluation, run aggregation, and representation dumps."""
from __future__ import annotations

import csv
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sentence
from .model import SpanRep

__all__ = [
    "LabelCounts",
    "EvalReport",
    "EvaluationError",
    "span_prf1",
    "aggregate_runs",
    "format_mean_std",
    "dump_representations",
]


class EvaluationError(ValueError):
    """Inconsistent evaluation inputs."""


@dataclass
class LabelCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    """Micro precision/recall/F1 over exact (sentence, start, end, label)
    matches, with a per-label breakdown."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_label: dict[str, LabelCounts] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_label": {
                label: {"tp": c.tp, "fp": c.fp, "fn": c.fn}
                for label, c in sorted(self.per_label.items())
            },
        }


def span_prf1(predictions: Sequence, gold_sentences: Sequence[Sentence]) -> EvalReport:
    """Score predictions against gold annotations with one-to-one matching.

    A prediction is a true positive when an unconsumed gold annotation has
    the same sentence id, start, end and label; duplicates of one gold span
    count one TP and the rest FP. Predictions for unknown sentence ids
    raise EvaluationError. Empty denominators score zero.
    """
    known = {s.id for s in gold_sentences}
    remaining: Counter = Counter()
    gold_totals: Counter = Counter()
    for sent in gold_sentences:
        for ann in sent.annotations:
            remaining[(sent.id, ann.start, ann.end, ann.label)] += 1
            gold_totals[ann.label] += 1
    per_label: dict[str, LabelCounts] = defaultdict(LabelCounts)
    for label in gold_totals:
        per_label[label]  # ensure labels with zero predictions still report
    tp = fp = 0
    for pred in predictions:
        if pred.sentence_id not in known:
            raise EvaluationError(
                f"prediction references unknown sentence id {pred.sentence_id!r}"
            )
        key = (pred.sentence_id, pred.start, pred.end, pred.label)
        if remaining[key] > 0:
            remaining[key] -= 1
            tp += 1
            per_label[pred.label].tp += 1
        else:
            fp += 1
            per_label[pred.label].fp += 1
    fn = 0
    for label, total in gold_totals.items():
        label_fn = total - per_label[label].tp
        per_label[label].fn = label_fn
        fn += label_fn
    precision, recall, f1 = _prf(tp, fp, fn)
    return EvalReport(
        tp=tp, fp=fp, fn=fn,
        precision=precision, recall=recall, f1=f1,
        per_label=dict(per_label),
    )


def aggregate_runs(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1) over per-seed results."""
    if len(values) < 2:
        raise EvaluationError(
            f"aggregation needs at least 2 values, got {len(values)}"
        )
    return statistics.fmean(values), statistics.stdev(values)


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def dump_representations(reps: Sequence[SpanRep], path: str | Path) -> None:
    """Write span vectors as CSV: sentence_id,start,end,label,v0..v{d-1}.

    Values are float32 printed at 9 significant digits, enough to parse
    back bit-identically.
    """
    if not reps:
        raise EvaluationError("no representations to dump")
    d = np.asarray(reps[0].vector).reshape(-1).shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sentence_id", "start", "end", "label"] + [f"v{i}" for i in range(d)]
        )
        for rep in reps:
            vec = np.asarray(rep.vector, dtype=np.float32).reshape(-1)
            if vec.shape[0] != d:
                raise EvaluationError(
                    f"span ({rep.sentence_id!r}, {rep.start}, {rep.end}) has "
                    f"width {vec.shape[0]}, expected {d}"
                )
            writer.writerow(
                [rep.sentence_id, rep.start, rep.end, rep.label]
                + [format(float(x), ".9g") for x in vec]
            )

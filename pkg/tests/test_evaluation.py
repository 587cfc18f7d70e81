"""Span-level scoring against a set-intersection oracle, aggregation,
and the representation CSV dump."""
from __future__ import annotations

import csv
import random
import statistics
from collections import Counter

import numpy as np
import pytest

from spancl.autograd import Tensor
from spancl.corpus import Sentence, SpanAnnotation
from spancl.evaluation import (
    EvaluationError,
    aggregate_runs,
    dump_representations,
    format_mean_std,
    span_prf1,
)
from spancl.model import SpanRep
from spancl.protocol import Prediction


def sent(sid, n, anns):
    return Sentence(
        id=sid,
        tokens=tuple(f"t{i}" for i in range(n)),
        annotations=tuple(SpanAnnotation(*a) for a in anns),
    )


def pred(sid, start, end, label, score=0.9):
    return Prediction(sentence_id=sid, start=start, end=end, label=label, score=score)


class TestSpanPrf1:
    def test_worked_example(self):
        gold = [
            sent("a", 6, [(1, 2, "gene"), (4, 4, "cell")]),
            sent("b", 6, [(2, 3, "gene")]),
        ]
        preds = [
            pred("a", 1, 2, "gene"),   # hit
            pred("a", 4, 4, "gene"),   # right span, wrong label
            pred("b", 2, 3, "gene"),   # hit
        ]
        report = span_prf1(preds, gold)
        assert (report.tp, report.fp, report.fn) == (2, 1, 1)
        assert abs(report.precision - 2 / 3) < 1e-12
        assert abs(report.recall - 2 / 3) < 1e-12
        assert abs(report.f1 - 2 / 3) < 1e-12

    def test_exact_boundaries_required(self):
        gold = [sent("a", 6, [(2, 4, "gene")])]
        report = span_prf1([pred("a", 2, 3, "gene")], gold)
        assert (report.tp, report.fp, report.fn) == (0, 1, 1)

    def test_duplicate_predictions_one_tp_rest_fp(self):
        gold = [sent("a", 4, [(1, 2, "gene")])]
        preds = [pred("a", 1, 2, "gene"), pred("a", 1, 2, "gene"), pred("a", 1, 2, "gene")]
        report = span_prf1(preds, gold)
        assert (report.tp, report.fp, report.fn) == (1, 2, 0)

    def test_nested_gold_both_matchable(self):
        gold = [sent("a", 6, [(1, 4, "outer"), (2, 3, "inner")])]
        preds = [pred("a", 1, 4, "outer"), pred("a", 2, 3, "inner")]
        report = span_prf1(preds, gold)
        assert (report.tp, report.fp, report.fn) == (2, 0, 0)
        assert report.f1 == 1.0

    def test_same_span_two_labels(self):
        gold = [sent("a", 4, [(1, 2, "gene"), (1, 2, "protein")])]
        preds = [pred("a", 1, 2, "gene"), pred("a", 1, 2, "protein")]
        report = span_prf1(preds, gold)
        assert (report.tp, report.fp, report.fn) == (2, 0, 0)

    def test_zero_zero_convention(self):
        report = span_prf1([], [sent("a", 3, [])])
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_unknown_sentence_id_rejected(self):
        with pytest.raises(EvaluationError, match="zzz"):
            span_prf1([pred("zzz", 1, 1, "gene")], [sent("a", 3, [])])

    def test_per_label_breakdown(self):
        gold = [sent("a", 8, [(1, 1, "gene"), (2, 2, "gene"), (4, 5, "cell")])]
        preds = [pred("a", 1, 1, "gene"), pred("a", 7, 7, "gene")]
        report = span_prf1(preds, gold)
        assert report.per_label["gene"].tp == 1
        assert report.per_label["gene"].fp == 1
        assert report.per_label["gene"].fn == 1
        # cell was never predicted but must still appear
        assert report.per_label["cell"].fn == 1
        assert report.per_label["cell"].tp == 0

    def test_to_dict_sorted_labels(self):
        gold = [sent("a", 6, [(1, 1, "z"), (2, 2, "a")])]
        preds = [pred("a", 1, 1, "z"), pred("a", 2, 2, "a")]
        data = span_prf1(preds, gold).to_dict()
        assert list(data["per_label"]) == ["a", "z"]
        assert data["f1"] == 1.0

    def test_swap_symmetry(self):
        # swapping predictions and gold swaps precision and recall
        gold_a = [sent("a", 8, [(1, 2, "x"), (4, 4, "y")])]
        preds_a = [pred("a", 1, 2, "x"), pred("a", 5, 5, "y"), pred("a", 7, 8, "x")]
        fwd = span_prf1(preds_a, gold_a)
        gold_b = [sent("a", 8, [(1, 2, "x"), (5, 5, "y"), (7, 8, "x")])]
        preds_b = [pred("a", 1, 2, "x"), pred("a", 4, 4, "y")]
        rev = span_prf1(preds_b, gold_b)
        assert fwd.precision == rev.recall
        assert fwd.recall == rev.precision
        assert abs(fwd.f1 - rev.f1) < 1e-12


def oracle_counts(preds, gold_sents):
    """Multiset intersection on (sentence_id, start, end, label) triples."""
    p = Counter((x.sentence_id, x.start, x.end, x.label) for x in preds)
    g = Counter(
        (s.id, a.start, a.end, a.label) for s in gold_sents for a in s.annotations
    )
    tp = sum((p & g).values())
    return tp, sum(p.values()) - tp, sum(g.values()) - tp


class TestOracleProperty:
    def test_random_pairs_match_oracle(self):
        rng = random.Random(77)
        labels = ["a", "b", "c"]
        for _ in range(300):
            n = rng.randint(3, 8)
            anns = []
            for _ in range(rng.randint(0, 4)):
                start = rng.randint(1, n)
                end = min(n, start + rng.randint(0, 2))
                label = rng.choice(labels)
                if (start, end, label) not in [(a.start, a.end, a.label) for a in anns]:
                    anns.append(SpanAnnotation(start, end, label))
            gold = [Sentence(id="s", tokens=tuple("t" * 1 for _ in range(n)),
                             annotations=tuple(anns))]
            preds = []
            for _ in range(rng.randint(0, 5)):
                start = rng.randint(1, n)
                end = min(n, start + rng.randint(0, 2))
                preds.append(pred("s", start, end, rng.choice(labels)))
            report = span_prf1(preds, gold)
            assert (report.tp, report.fp, report.fn) == oracle_counts(preds, gold)


class TestAggregation:
    def test_mean_and_sample_stdev(self):
        values = [33.0, 35.0, 34.0]
        mean, std = aggregate_runs(values)
        assert abs(mean - statistics.fmean(values)) < 1e-12
        assert abs(std - statistics.stdev(values)) < 1e-12  # n-1 denominator

    def test_needs_two_values(self):
        with pytest.raises(EvaluationError):
            aggregate_runs([1.0])

    def test_formatting(self):
        assert format_mean_std(33.714, 1.749) == "33.71 ± 1.75"
        assert format_mean_std(46.06, 1.22) == "46.06 ± 1.22"


class TestDumpRepresentations:
    def make_reps(self, d=3):
        rng = np.random.default_rng(0)
        out = []
        for i in range(4):
            vec = rng.standard_normal(d).astype(np.float32)
            out.append(SpanRep("s%d" % (i % 2), i + 1, i + 1, Tensor(vec), "gene"))
        return out

    def test_round_trip_at_nine_digits(self, tmp_path):
        reps = self.make_reps()
        path = tmp_path / "reps.csv"
        dump_representations(reps, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sentence_id", "start", "end", "label", "v0", "v1", "v2"]
        assert len(rows) == 5
        for row, rep_obj in zip(rows[1:], reps):
            assert row[0] == rep_obj.sentence_id
            assert (int(row[1]), int(row[2])) == (rep_obj.start, rep_obj.end)
            back = np.array([float(x) for x in row[4:]], dtype=np.float32)
            # nine significant digits are enough to reproduce float32 exactly
            assert np.array_equal(back, rep_obj.vector.value)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(EvaluationError):
            dump_representations([], tmp_path / "reps.csv")

    def test_width_mismatch_rejected(self, tmp_path):
        reps = self.make_reps()
        reps.append(SpanRep("s9", 1, 1, Tensor(np.zeros(5, dtype=np.float32)), "gene"))
        with pytest.raises(EvaluationError, match="width"):
            dump_representations(reps, tmp_path / "reps.csv")

"""Contrastive objective: pinned analytic values, reference-formula
agreement, monotonicity, and pair construction."""
from __future__ import annotations

import math
import random

import numpy as np
import pytest

from spancl.autograd import Tensor, finite_diff_grad
from spancl.corpus import NON_ENTITY
from spancl.model import SpanRep
from spancl.objective import (
    LossConfig,
    PairSet,
    build_pairs,
    circle_loss,
    cosine_similarity,
    episode_loss,
)


def rep(vector, label="A", sid="s", span=(1, 1)):
    return SpanRep(
        sentence_id=sid,
        start=span[0],
        end=span[1],
        vector=Tensor(np.asarray(vector, dtype=np.float64)),
        label=label,
    )


def from_angle(theta, label="A"):
    return rep([math.cos(theta), math.sin(theta)], label=label)


def np_logsumexp(values):
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def reference_loss(anchor_vec, pos_vecs, neg_vecs, tau, lam):
    """Straight transcription: softplus of LSE over (lam - tau*cos) for
    positives plus LSE over (tau*cos) for negatives."""

    def cos(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    if not neg_vecs:
        return 0.0
    lse_p = np_logsumexp([lam - tau * cos(anchor_vec, p) for p in pos_vecs])
    lse_n = np_logsumexp([tau * cos(anchor_vec, n) for n in neg_vecs])
    return float(np.logaddexp(0.0, lse_p + lse_n))


class TestCosine:
    def test_pinned_examples(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0
        assert abs(cosine_similarity([1, 2], [2, 4]) - 1.0) < 1e-12
        assert abs(cosine_similarity([1, 0], [-1, 0]) + 1.0) < 1e-12

    def test_degenerate_flag(self):
        value, degenerate = cosine_similarity([0, 0], [1, 0], return_degenerate=True)
        assert degenerate and abs(value) < 1e-6
        _, ok = cosine_similarity([1, 0], [1, 0], return_degenerate=True)
        assert not ok

    def test_shape_mismatch(self):
        with pytest.raises(Exception):
            cosine_similarity([1, 0], [1, 0, 0])


class TestAnalyticValues:
    def test_no_negatives_exactly_zero(self):
        ps = PairSet(anchor=rep([1, 0]), positives=[rep([0, 1])], negatives=[])
        loss = circle_loss(ps, LossConfig(tau=10.0, bias=30.0))
        assert loss.item() == 0.0

    def test_orthogonal_pair_log_two(self):
        # one positive at cos 0, one negative at cos 0, tau=1, no bias
        ps = PairSet(
            anchor=rep([1, 0]),
            positives=[rep([0, 1])],
            negatives=[rep([0, -1], label="B")],
        )
        loss = circle_loss(ps, LossConfig(tau=1.0, bias=0.0))
        assert abs(loss.item() - math.log(2.0)) < 1e-9

    def test_aligned_anti_aligned_pair(self):
        # one positive at cos 1, one negative at cos -1, tau=2, no bias
        ps = PairSet(
            anchor=rep([1, 0]),
            positives=[rep([2, 0])],
            negatives=[rep([-3, 0], label="B")],
        )
        loss = circle_loss(ps, LossConfig(tau=2.0, bias=0.0))
        assert abs(loss.item() - math.log(1.0 + math.exp(-4.0))) < 1e-9

    def test_empty_positives_rejected(self):
        ps = PairSet(anchor=rep([1, 0]), positives=[], negatives=[rep([0, 1], "B")])
        with pytest.raises(ValueError, match="positives"):
            circle_loss(ps, LossConfig())


def random_config(rng, lam):
    anchor = from_angle(rng.uniform(0, 2 * math.pi))
    pos = [from_angle(rng.uniform(0, 2 * math.pi)) for _ in range(rng.randint(1, 4))]
    neg = [from_angle(rng.uniform(0, 2 * math.pi), "B") for _ in range(rng.randint(1, 4))]
    tau = rng.uniform(0.3, 6.0)
    return PairSet(anchor, pos, neg), LossConfig(tau=tau, bias=lam)


class TestReferenceAgreement:
    def test_matches_reference_formula(self):
        rng = random.Random(99)
        for _ in range(100):
            ps, config = random_config(rng, lam=rng.choice([0.0, 1.5, 30.0]))
            got = circle_loss(ps, config).item()
            want = reference_loss(
                ps.anchor.vector.value,
                [p.vector.value for p in ps.positives],
                [n.vector.value for n in ps.negatives],
                config.tau,
                config.bias,
            )
            assert abs(got - want) <= 1e-10 * max(1.0, abs(want))

    def test_literal_product_form_small_tau(self):
        # log(1 + sum_p e^(-tau c_p) * sum_n e^(tau c_n)) without any
        # log-space tricks; safe for tau <= 2 and few pairs
        rng = random.Random(5)
        for _ in range(50):
            ps, _ = random_config(rng, lam=0.0)
            tau = rng.uniform(0.2, 2.0)
            config = LossConfig(tau=tau, bias=0.0)

            def cos(a, b):
                return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

            av = ps.anchor.vector.value
            s_pos = sum(math.exp(-tau * cos(av, p.vector.value)) for p in ps.positives)
            s_neg = sum(math.exp(tau * cos(av, n.vector.value)) for n in ps.negatives)
            literal = math.log(1.0 + s_pos * s_neg)
            got = circle_loss(ps, config).item()
            assert abs(got - literal) <= 1e-10 * max(1.0, literal)

    def test_finite_at_reference_scale(self):
        config = LossConfig(tau=10.0, bias=30.0)
        for pos_vec, neg_vec in [([2, 0], [-2, 0]), ([-1, 0], [1, 0]), ([0, 1], [0, 1])]:
            ps = PairSet(
                anchor=rep([1, 0]),
                positives=[rep(pos_vec)],
                negatives=[rep(neg_vec, "B")],
            )
            value = circle_loss(ps, config).item()
            assert math.isfinite(value)


class TestShiftAndMonotonicity:
    def test_bias_shift_identity(self):
        rng = random.Random(7)
        for _ in range(100):
            ps, config = random_config(rng, lam=rng.uniform(0.0, 40.0))
            base = circle_loss(ps, LossConfig(tau=config.tau, bias=0.0)).item()
            lse_neg_plus_pos = (
                math.log(math.expm1(base)) if base > 1e-12 else -math.inf
            )
            shifted = circle_loss(ps, config).item()
            want = float(np.logaddexp(0.0, config.bias + lse_neg_plus_pos))
            assert abs(shifted - want) <= 1e-9 * max(1.0, abs(want))
            assert shifted >= base  # raising the bias never lowers the loss

    def test_positive_cosine_up_means_loss_down(self):
        rng = random.Random(11)
        for _ in range(100):
            tau = rng.uniform(0.3, 6.0)
            config = LossConfig(tau=tau, bias=rng.choice([0.0, 30.0]))
            theta_pos = rng.uniform(0.3, math.pi - 0.1)
            ps = PairSet(
                anchor=rep([1, 0]),
                positives=[from_angle(theta_pos)],
                negatives=[from_angle(rng.uniform(0, math.pi), "B")],
            )
            before = circle_loss(ps, config).item()
            ps.positives[0] = from_angle(theta_pos - 0.2)  # cosine strictly up
            after = circle_loss(ps, config).item()
            assert after < before

    def test_negative_cosine_up_means_loss_up(self):
        rng = random.Random(13)
        for _ in range(100):
            tau = rng.uniform(0.3, 6.0)
            config = LossConfig(tau=tau, bias=rng.choice([0.0, 30.0]))
            theta_neg = rng.uniform(0.3, math.pi - 0.1)
            ps = PairSet(
                anchor=rep([1, 0]),
                positives=[from_angle(rng.uniform(0, math.pi))],
                negatives=[from_angle(theta_neg, "B")],
            )
            before = circle_loss(ps, config).item()
            ps.negatives[0] = from_angle(theta_neg - 0.2)
            after = circle_loss(ps, config).item()
            assert after > before


class TestGradients:
    def test_anchor_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        pos = [rep(rng.standard_normal(4)) for _ in range(2)]
        neg = [rep(rng.standard_normal(4), "B") for _ in range(3)]
        config = LossConfig(tau=3.0, bias=5.0)
        a0 = rng.standard_normal(4)

        def build(t):
            return circle_loss(PairSet(anchor=SpanRep("s", 1, 1, t, "A"),
                                       positives=pos, negatives=neg), config)

        t = Tensor(a0.copy(), requires_grad=True)
        build(t).backward()

        def f(x):
            return build(Tensor(x)).item()

        numeric = finite_diff_grad(f, a0)
        denom = max(np.abs(t.grad).max(), np.abs(numeric).max(), 1e-8)
        assert np.abs(t.grad - numeric).max() / denom < 1e-6

    def test_partner_gradients_flow(self):
        rng = np.random.default_rng(4)
        p = Tensor(rng.standard_normal(3), requires_grad=True)
        n = Tensor(rng.standard_normal(3), requires_grad=True)
        ps = PairSet(
            anchor=rep(rng.standard_normal(3)),
            positives=[SpanRep("s", 1, 1, p, "A")],
            negatives=[SpanRep("s", 2, 2, n, "B")],
        )
        circle_loss(ps, LossConfig(tau=2.0, bias=1.0)).backward()
        assert p.grad is not None and np.any(p.grad != 0)
        assert n.grad is not None and np.any(n.grad != 0)


class TestBuildPairs:
    def make_reps(self):
        rng = np.random.default_rng(0)
        return [
            rep(rng.standard_normal(3), "A", span=(1, 1)),
            rep(rng.standard_normal(3), "A", span=(2, 2)),
            rep(rng.standard_normal(3), "B", span=(3, 3)),
            rep(rng.standard_normal(3), NON_ENTITY, span=(4, 4)),
        ]

    def test_counts_from_definition(self):
        reps = self.make_reps()
        pairs = build_pairs(reps, LossConfig(), rng_seed=0)
        # both A spans anchor; B has no same-label partner and is skipped
        assert len(pairs) == 2
        for ps in pairs:
            assert ps.anchor.label == "A"
            assert len(ps.positives) == 1
            assert len(ps.negatives) == 2
            assert all(n.label != "A" for n in ps.negatives)

    def test_all_non_entity_yields_nothing(self):
        rng = np.random.default_rng(1)
        reps = [rep(rng.standard_normal(3), NON_ENTITY, span=(i, i)) for i in range(1, 5)]
        assert build_pairs(reps, LossConfig(), rng_seed=0) == []

    def test_o_spans_never_anchor_or_positive(self):
        reps = self.make_reps()
        pairs = build_pairs(reps, LossConfig(), rng_seed=0)
        for ps in pairs:
            assert ps.anchor.label != NON_ENTITY
            assert all(p.label == ps.anchor.label for p in ps.positives)

    def test_negative_cap_deterministic(self):
        rng = np.random.default_rng(2)
        reps = [rep(rng.standard_normal(3), "A", span=(1, 1)),
                rep(rng.standard_normal(3), "A", span=(2, 2))]
        reps += [rep(rng.standard_normal(3), NON_ENTITY, span=(i, i)) for i in range(3, 9)]
        config = LossConfig(max_negatives_per_anchor=1)
        first = build_pairs(reps, config, rng_seed=5)
        second = build_pairs(reps, config, rng_seed=5)
        third = build_pairs(reps, config, rng_seed=6)
        assert all(len(ps.negatives) == 1 for ps in first)
        picks = lambda pairs: [(ps.negatives[0].start, ps.negatives[0].end) for ps in pairs]
        assert picks(first) == picks(second)
        assert picks(first) != picks(third)  # seed moves the draw

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)
        with pytest.raises(ValueError):
            LossConfig(bias=-1.0)
        with pytest.raises(ValueError):
            LossConfig(max_negatives_per_anchor=0)


class TestEpisodeLoss:
    def test_mean_over_pair_sets(self):
        rng = np.random.default_rng(8)
        reps = [
            rep(rng.standard_normal(4), "A", span=(1, 1)),
            rep(rng.standard_normal(4), "A", span=(2, 2)),
            rep(rng.standard_normal(4), "B", span=(3, 3)),
            rep(rng.standard_normal(4), "B", span=(4, 4)),
            rep(rng.standard_normal(4), NON_ENTITY, span=(5, 5)),
        ]
        config = LossConfig(tau=2.0, bias=3.0)
        pairs = build_pairs(reps, config, rng_seed=0)
        total = episode_loss(pairs, config).item()
        singles = [circle_loss(ps, config).item() for ps in pairs]
        assert abs(total - np.mean(singles)) < 1e-9

    def test_empty_episode_is_zero(self):
        out = episode_loss([], LossConfig())
        assert out.item() == 0.0
        assert out.dtype == np.float32

    def test_mixed_empty_negatives_average(self):
        a = PairSet(anchor=rep([1, 0]), positives=[rep([0, 1])], negatives=[])
        b = PairSet(
            anchor=rep([1, 0]),
            positives=[rep([0, 1])],
            negatives=[rep([0, -1], "B")],
        )
        config = LossConfig(tau=1.0, bias=0.0)
        total = episode_loss([a, b], config).item()
        assert abs(total - math.log(2.0) / 2.0) < 1e-9

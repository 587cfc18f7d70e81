"""Span-pair construction and the circle-style contrastive loss.

Per anchor span s with positives P and negatives N the loss is

    softplus(bias + LSE_{p in P}(-tau * cos(s, p)) + LSE_{n in N}(tau * cos(s, n)))

which equals log(1 + e^bias * sum_p e^(-tau cos(s,p)) * sum_n e^(tau cos(s,n)))
but stays finite for any tau and bias. An anchor with no negatives scores
exactly zero; anchors without positives are skipped during pair building.
Episode loss is the unweighted mean over anchors.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import NON_ENTITY
from .model import SpanRep

__all__ = [
    "PairPolicy",
    "LossConfig",
    "PairSet",
    "cosine_similarity",
    "build_pairs",
    "circle_loss",
    "episode_loss",
]


class PairPolicy(Enum):
    """How non-entity spans participate in pair building."""

    O_AS_NEGATIVE_ONLY = "o-as-negative-only"


@dataclass
class LossConfig:
    tau: float = 10.0
    bias: float = 30.0
    o_pair_policy: PairPolicy = PairPolicy.O_AS_NEGATIVE_ONLY
    max_negatives_per_anchor: int = 64

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.bias < 0:
            raise ValueError(f"bias must be >= 0, got {self.bias}")
        if self.max_negatives_per_anchor < 1:
            raise ValueError("max_negatives_per_anchor must be >= 1")


@dataclass
class PairSet:
    """One anchor with its positive and negative partner spans."""

    anchor: SpanRep
    positives: list[SpanRep]
    negatives: list[SpanRep]


def cosine_similarity(a, b, eps: float = 1e-12, return_degenerate: bool = False):
    """Cosine of two vectors with an epsilon-guarded denominator.

    With return_degenerate=True also reports whether either input had a
    norm below eps (the value is then a guarded ratio near zero).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ag.DimensionError(f"cosine: shapes {a.shape} and {b.shape} differ")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    value = float(np.dot(a, b) / max(na * nb, eps))
    degenerate = na < eps or nb < eps
    if return_degenerate:
        return value, degenerate
    return value


def build_pairs(
    reps: Sequence[SpanRep], config: LossConfig, rng_seed: int
) -> list[PairSet]:
    """One PairSet per entity span that has at least one same-label partner.

    Positives are the other spans sharing the anchor's label. Negatives are
    every differently-labeled span, non-entity spans included, downsampled
    to max_negatives_per_anchor with a seeded draw. Entity spans lacking a
    positive are skipped; non-entity spans never anchor a set.
    """
    rng = random.Random(rng_seed)
    entity = [r for r in reps if r.label != NON_ENTITY]
    non_entity = [r for r in reps if r.label == NON_ENTITY]
    out: list[PairSet] = []
    for anchor in entity:
        positives = [r for r in entity if r is not anchor and r.label == anchor.label]
        if not positives:
            continue
        negatives = [r for r in entity if r.label != anchor.label] + non_entity
        if len(negatives) > config.max_negatives_per_anchor:
            negatives = rng.sample(negatives, config.max_negatives_per_anchor)
        out.append(PairSet(anchor=anchor, positives=positives, negatives=negatives))
    return out


def _loss_terms(
    pair_sets: Sequence[PairSet], config: LossConfig
) -> list[Tensor]:
    """Per-anchor loss tensors, sharing one normalized similarity matrix."""
    order: dict[int, int] = {}
    uniq: list[SpanRep] = []

    def index_of(rep: SpanRep) -> int:
        key = id(rep)
        if key not in order:
            order[key] = len(uniq)
            uniq.append(rep)
        return order[key]

    refs = []
    for ps in pair_sets:
        refs.append(
            (
                index_of(ps.anchor),
                np.array([index_of(r) for r in ps.positives], dtype=np.intp),
                np.array([index_of(r) for r in ps.negatives], dtype=np.intp),
            )
        )
    matrix = ag.stack([rep.vector for rep in uniq], axis=0)
    normed = ag.l2_normalize(matrix, axis=-1)
    sims = ag.matmul(normed, ag.transpose(normed))
    terms: list[Tensor] = []
    for (a_idx, pos_idx, neg_idx), ps in zip(refs, pair_sets):
        if len(ps.positives) == 0:
            raise ValueError("PairSet with no positives cannot be scored")
        if len(ps.negatives) == 0:
            terms.append(Tensor(np.asarray(0.0, dtype=sims.dtype)))
            continue
        lse_pos = ag.logsumexp(ag.mul(sims[a_idx, pos_idx], -config.tau))
        lse_neg = ag.logsumexp(ag.mul(sims[a_idx, neg_idx], config.tau))
        terms.append(ag.softplus(ag.add(ag.add(lse_pos, lse_neg), config.bias)))
    return terms


def circle_loss(pair_set: PairSet, config: LossConfig) -> Tensor:
    """Scalar loss for a single anchor's pair set."""
    return _loss_terms([pair_set], config)[0]


def episode_loss(pair_sets: Sequence[PairSet], config: LossConfig) -> Tensor:
    """Unweighted mean of the per-anchor losses; zero when nothing pairs."""
    if not pair_sets:
        return Tensor(np.asarray(0.0, dtype=np.float32))
    terms = _loss_terms(pair_sets, config)
    return ag.tmean(ag.stack(terms, axis=0), axis=0)

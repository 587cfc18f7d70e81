"""Episodic protocol: source-domain training, support fine-tuning, and
similarity-based span prediction without a classifier head.

Training samples one episode per optimizer step, scores every candidate
span of the episode's sentences, and minimizes the contrastive episode
loss. Inference labels each query span by its nearest support span under
cosine similarity; non-entity support spans take part in the index, so a
query span can resolve to "no entity" and produce no prediction.
"""
from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autograd as ag
from ._util import derive_seed
from .autograd import Adam, Tensor
from .corpus import (
    NON_ENTITY,
    Episode,
    Sentence,
    enumerate_spans,
    annotation_index,
    label_span_counts,
    sample_episode,
)
from .embeddings import EmbeddingSource
from .model import ModelConfig, ModelParams, SpanRep, model_forward
from .objective import LossConfig, build_pairs, episode_loss

log = logging.getLogger(__name__)

O_SPAN_INDEX_CAP = 256
O_SPAN_CAP_SEED = 0

__all__ = [
    "TrainPlan",
    "TrainResult",
    "Prediction",
    "ProtocolError",
    "O_SPAN_INDEX_CAP",
    "default_finetune_steps",
    "train_source",
    "finetune_support",
    "nn_predict",
    "prototype_predict",
    "nnshot_predict",
    "predict_episode",
]


class ProtocolError(RuntimeError):
    """Contract violations in the episodic protocol."""


@dataclass
class TrainPlan:
    """Schedule and optimizer settings for source-domain training."""

    episodes_train: int = 10_000
    episodes_valid: int = 500
    validate_every: int = 1_000
    way: int = 5
    shot: int = 5
    learning_rate: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        if self.episodes_train < 1 or self.episodes_valid < 1:
            raise ValueError("episode counts must be >= 1")
        if not 1 <= self.validate_every <= self.episodes_train:
            raise ValueError("validate_every must lie in [1, episodes_train]")
        if self.way < 1 or self.shot < 1:
            raise ValueError("way and shot must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    source_labels: list[str]
    best_validation_loss: float


@dataclass(frozen=True)
class Prediction:
    sentence_id: str
    start: int
    end: int
    label: str
    score: float

    def to_record(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "start": self.start,
            "end": self.end,
            "label": self.label,
            "score": self.score,
        }


def default_finetune_steps(shot: int) -> int:
    """50 fine-tuning steps for 1-shot work, 100 otherwise."""
    return 50 if shot <= 1 else 100


def _sentence_reps(
    sentence: Sentence,
    params: ModelParams,
    config: ModelConfig,
    source: EmbeddingSource,
    train: bool = False,
    dropout_seed: int = 0,
) -> list[SpanRep]:
    emb = source.lookup(sentence.id)
    if emb.vectors.shape[0] != len(sentence.tokens):
        raise ProtocolError(
            f"sentence {sentence.id!r}: {emb.vectors.shape[0]} embedding rows "
            f"for {len(sentence.tokens)} tokens"
        )
    return model_forward(
        sentence, emb.vectors, params, config, train=train, dropout_seed=dropout_seed
    )


def _episode_loss_tensor(
    sentences: Sequence[Sentence],
    params: ModelParams,
    config: ModelConfig,
    loss_config: LossConfig,
    source: EmbeddingSource,
    train: bool,
    base_seed: int,
) -> tuple[Tensor, dict]:
    reps: list[SpanRep] = []
    for k, sent in enumerate(sentences):
        reps.extend(
            _sentence_reps(
                sent, params, config, source,
                train=train, dropout_seed=derive_seed(base_seed, "drop", k),
            )
        )
    pairs = build_pairs(reps, loss_config, derive_seed(base_seed, "pairs"))
    n_entity = sum(1 for r in reps if r.label != NON_ENTITY)
    stats = {"anchors": len(pairs), "skipped_anchors": n_entity - len(pairs)}
    return episode_loss(pairs, loss_config), stats


def train_source(
    pool: Sequence[Sentence],
    plan: TrainPlan,
    source: EmbeddingSource,
    model_config: ModelConfig,
    loss_config: LossConfig | None = None,
) -> TrainResult:
    """Episodic training over a source pool; one optimizer step per episode.

    Validation runs every plan.validate_every episodes on a fixed set of
    episodes sampled up front; the parameters with the best mean validation
    loss are returned together with the per-episode log.
    """
    loss_config = loss_config or LossConfig()
    seed = plan.rng_seed
    params = ModelParams.initialize(model_config, derive_seed(seed, "init"))
    optimizer = Adam(params.tensors, lr=plan.learning_rate)
    valid_episodes = [
        sample_episode(pool, plan.way, plan.shot, derive_seed(seed, "valid", j))
        for j in range(plan.episodes_valid)
    ]
    source_labels = sorted(label_span_counts(pool))
    records: list[dict] = []
    best_loss = math.inf
    best_params = params.clone()

    def validation_loss() -> float:
        total = 0.0
        with ag.no_grad():
            for j, episode in enumerate(valid_episodes):
                loss, _ = _episode_loss_tensor(
                    list(episode.support) + list(episode.query),
                    params, model_config, loss_config, source,
                    train=False, base_seed=derive_seed(seed, "valid-loss", j),
                )
                total += loss.item()
        return total / len(valid_episodes)

    for ep in range(plan.episodes_train):
        episode_seed = derive_seed(seed, "episode", ep)
        episode = sample_episode(pool, plan.way, plan.shot, episode_seed)
        loss, stats = _episode_loss_tensor(
            list(episode.support) + list(episode.query),
            params, model_config, loss_config, source,
            train=True, base_seed=episode_seed,
        )
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise ProtocolError(
                f"non-finite loss {loss_value} at episode {ep} "
                f"(episode seed {episode_seed})"
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        record = {"episode": ep, "loss": loss_value}
        if stats["skipped_anchors"]:
            record["skipped_anchors"] = stats["skipped_anchors"]
        if (ep + 1) % plan.validate_every == 0:
            vloss = validation_loss()
            record["validation_loss"] = vloss
            if vloss < best_loss:
                best_loss = vloss
                best_params = params.clone()
            log.info("episode %d: loss %.6f, validation %.6f", ep, loss_value, vloss)
        records.append(record)
    return TrainResult(
        params=best_params,
        log=records,
        source_labels=source_labels,
        best_validation_loss=best_loss,
    )


def finetune_support(
    params: ModelParams,
    support: Sequence[Sentence],
    steps: int,
    source: EmbeddingSource,
    model_config: ModelConfig,
    loss_config: LossConfig | None = None,
    learning_rate: float = 1e-4,
    rng_seed: int = 0,
) -> ModelParams:
    """Adapt a copy of the parameters on support sentences alone.

    Purely functional: the input parameters are never touched. steps=0
    returns an identical copy.
    """
    loss_config = loss_config or LossConfig()
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not support or not any(s.annotations for s in support):
        raise ProtocolError("support set must contain at least one entity span")
    tuned = params.clone()
    optimizer = Adam(tuned.tensors, lr=learning_rate)
    for step in range(steps):
        loss, _ = _episode_loss_tensor(
            support, tuned, model_config, loss_config, source,
            train=True, base_seed=derive_seed(rng_seed, "finetune", step),
        )
        value = loss.item()
        if not math.isfinite(value):
            raise ProtocolError(f"non-finite loss {value} at fine-tune step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return tuned


def _raw_span_reps(
    sentence: Sentence, source: EmbeddingSource, max_len: int
) -> list[SpanRep]:
    """Span vectors straight off the raw embeddings (max-pool, no model)."""
    emb = source.lookup(sentence.id)
    if emb.vectors.shape[0] != len(sentence.tokens):
        raise ProtocolError(
            f"sentence {sentence.id!r}: {emb.vectors.shape[0]} embedding rows "
            f"for {len(sentence.tokens)} tokens"
        )
    labels = annotation_index(sentence)
    reps = []
    for start, end in enumerate_spans(sentence, max_len):
        vec = np.max(emb.vectors[start - 1 : end], axis=0)
        reps.append(
            SpanRep(
                sentence_id=sentence.id,
                start=start,
                end=end,
                vector=Tensor(vec),
                label=labels.get((start, end), NON_ENTITY),
            )
        )
    return reps


def _cap_o_spans(reps: list[SpanRep], cap: int) -> list[SpanRep]:
    entity = [r for r in reps if r.label != NON_ENTITY]
    other = [r for r in reps if r.label == NON_ENTITY]
    if len(other) > cap:
        rng = random.Random(O_SPAN_CAP_SEED)
        keep = sorted(rng.sample(range(len(other)), cap))
        other = [other[i] for i in keep]
    return entity + other


class _SupportIndex:
    """Normalized support span matrix for cosine lookups."""

    def __init__(self, reps: list[SpanRep], o_span_cap: int):
        reps = _cap_o_spans(reps, o_span_cap)
        if not reps:
            raise ProtocolError("support index is empty: no spans to compare against")
        self.reps = reps
        self.labels = [r.label for r in reps]
        matrix = np.stack([np.asarray(r.vector, dtype=np.float64) for r in reps])
        norms = np.sqrt(np.sum(matrix * matrix, axis=1, keepdims=True))
        self.normed = matrix / np.maximum(norms, 1e-12)

    def scores(self, vectors: np.ndarray) -> np.ndarray:
        q = np.asarray(vectors, dtype=np.float64)
        norms = np.sqrt(np.sum(q * q, axis=1, keepdims=True))
        return (q / np.maximum(norms, 1e-12)) @ self.normed.T


def _support_index(
    params: ModelParams,
    support: Sequence[Sentence],
    source: EmbeddingSource,
    config: ModelConfig,
    o_span_cap: int,
    raw: bool = False,
) -> _SupportIndex:
    reps: list[SpanRep] = []
    with ag.no_grad():
        for sent in support:
            if raw:
                reps.extend(_raw_span_reps(sent, source, config.max_len))
            else:
                reps.extend(_sentence_reps(sent, params, config, source))
    return _SupportIndex(reps, o_span_cap)


def _classify_nn(
    index: _SupportIndex,
    query_reps: list[SpanRep],
    threshold: float | None,
) -> list[Prediction]:
    if not query_reps:
        return []
    scores = index.scores(np.stack([np.asarray(r.vector) for r in query_reps]))
    best = np.argmax(scores, axis=1)  # ties resolve to the lowest index
    out = []
    for row, (rep, j) in enumerate(zip(query_reps, best)):
        label = index.labels[j]
        score = float(scores[row, j])
        if label == NON_ENTITY:
            continue
        if threshold is not None and score < threshold:
            continue
        out.append(
            Prediction(
                sentence_id=rep.sentence_id,
                start=rep.start,
                end=rep.end,
                label=label,
                score=score,
            )
        )
    return out


def nn_predict(
    params: ModelParams,
    support: Sequence[Sentence],
    query_sentence: Sentence,
    source: EmbeddingSource,
    config: ModelConfig,
    threshold: float | None = None,
    o_span_cap: int = O_SPAN_INDEX_CAP,
) -> list[Prediction]:
    """Label every candidate span of one query sentence by its nearest
    support span. Non-entity winners emit nothing; an optional cosine
    threshold demotes weak entity matches."""
    index = _support_index(params, support, source, config, o_span_cap)
    with ag.no_grad():
        query_reps = _sentence_reps(query_sentence, params, config, source)
    return _classify_nn(index, query_reps, threshold)


def nnshot_predict(
    params: ModelParams,
    support: Sequence[Sentence],
    query_sentence: Sentence,
    source: EmbeddingSource,
    config: ModelConfig,
    threshold: float | None = None,
    o_span_cap: int = O_SPAN_INDEX_CAP,
) -> list[Prediction]:
    """Nearest-neighbor baseline over max-pooled raw embeddings; the model
    parameters are ignored apart from max_len."""
    index = _support_index(params, support, source, config, o_span_cap, raw=True)
    with ag.no_grad():
        query_reps = _raw_span_reps(query_sentence, source, config.max_len)
    return _classify_nn(index, query_reps, threshold)


def prototype_predict(
    params: ModelParams,
    support: Sequence[Sentence],
    query_sentence: Sentence,
    source: EmbeddingSource,
    config: ModelConfig,
    threshold: float | None = None,
    o_span_cap: int = O_SPAN_INDEX_CAP,
    label_set: Sequence[str] | None = None,
) -> list[Prediction]:
    """Label spans by the nearest per-label mean of support span vectors.

    Prototypes follow the support index order of first appearance, so with
    exactly one support span per label the output matches nn_predict. When
    label_set is given, every listed label must have support spans.
    """
    index = _support_index(params, support, source, config, o_span_cap)
    if label_set is not None:
        present = {r.label for r in index.reps}
        missing = sorted(set(label_set) - present)
        if missing:
            raise ProtocolError(f"no support spans for labels: {', '.join(missing)}")
    with ag.no_grad():
        query_reps = _sentence_reps(query_sentence, params, config, source)
    return _classify_proto(index, query_reps, threshold)


def predict_episode(
    params: ModelParams,
    episode: Episode,
    source: EmbeddingSource,
    config: ModelConfig,
    mode: str = "nn",
    threshold: float | None = None,
    o_span_cap: int = O_SPAN_INDEX_CAP,
    workers: int = 1,
) -> list[Prediction]:
    """Predict over all query sentences of an episode, support shared.

    Output order follows the episode's query order regardless of workers.
    """
    if mode not in ("nn", "proto", "nnshot"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    raw = mode == "nnshot"
    index = _support_index(params, episode.support, source, config, o_span_cap, raw=raw)

    def classify(sentence: Sentence) -> list[Prediction]:
        with ag.no_grad():
            if raw:
                reps = _raw_span_reps(sentence, source, config.max_len)
            else:
                reps = _sentence_reps(sentence, params, config, source)
        if mode == "proto":
            return _classify_proto(index, reps, threshold)
        return _classify_nn(index, reps, threshold)

    sentences = list(episode.query)
    if workers > 1 and len(sentences) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(classify, sentences))
    else:
        results = [classify(s) for s in sentences]
    return [pred for batch in results for pred in batch]


def _classify_proto(
    index: _SupportIndex, query_reps: list[SpanRep], threshold: float | None
) -> list[Prediction]:
    order: list[str] = []
    groups: dict[str, list[np.ndarray]] = {}
    for rep in index.reps:
        if rep.label not in groups:
            order.append(rep.label)
            groups[rep.label] = []
        groups[rep.label].append(np.asarray(rep.vector, dtype=np.float64))
    protos = np.stack([np.mean(groups[lab], axis=0) for lab in order])
    norms = np.sqrt(np.sum(protos * protos, axis=1, keepdims=True))
    protos = protos / np.maximum(norms, 1e-12)
    if not query_reps:
        return []
    q = np.stack([np.asarray(r.vector, dtype=np.float64) for r in query_reps])
    qn = np.sqrt(np.sum(q * q, axis=1, keepdims=True))
    scores = (q / np.maximum(qn, 1e-12)) @ protos.T
    best = np.argmax(scores, axis=1)
    out = []
    for row, (rep, j) in enumerate(zip(query_reps, best)):
        label = order[j]
        score = float(scores[row, j])
        if label == NON_ENTITY:
            continue
        if threshold is not None and score < threshold:
            continue
        out.append(
            Prediction(
                sentence_id=rep.sentence_id,
                start=rep.start,
                end=rep.end,
                label=label,
                score=score,
            )
        )
    return out

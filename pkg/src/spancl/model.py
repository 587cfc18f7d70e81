"""Span representation model: BiLSTM context encoder, biaffine word-pair
scorer, residual projection, and max-pooled span vectors.

The pipeline per sentence of n tokens with embeddings W (n, d):

    H_f, H_b = BiLSTM(W)                         each (n, h)
    R[i,j]   = H_f[i]' U1 H_b[j] + (H_f[i] (+) H_b[j])' U2 + b   (n, n, r)
    R        = dropout(layer_norm(R))            norm over the r features
    V[i]     = mean_j(R[i, :]) P + W[i]          residual keeps the raw embedding
    s(p, q)  = max(V[p-1 : q])                   elementwise over the span rows

Ablation switches: use_biaffine=False short-circuits V = W; then
use_residual has no effect. use_residual=False drops the + W[i] term.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import NON_ENTITY, Sentence, annotation_index, enumerate_spans

__all__ = [
    "ModelConfig",
    "ModelParams",
    "SpanRep",
    "CheckpointError",
    "param_specs",
    "expected_shapes",
    "bilstm_forward",
    "biaffine_raw",
    "biaffine_scores",
    "layer_norm",
    "word_dependency_features",
    "span_vector",
    "model_forward",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, inconsistent, or tampered checkpoint files."""


@dataclass
class ModelConfig:
    """Dimensions and switches for the span encoder.

    d: embedding width; h: LSTM hidden size per direction; r: biaffine
    feature count; max_len: longest candidate span in tokens.
    """

    d: int
    h: int = 512
    r: int = 256
    dropout: float = 0.2
    max_len: int = 16
    use_biaffine: bool = True
    use_residual: bool = True

    def __post_init__(self):
        if min(self.d, self.h, self.r, self.max_len) < 1:
            raise ValueError("d, h, r and max_len must all be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every trainable array, in storage order."""
    d, h, r = config.d, config.h, config.r
    specs: list[tuple[str, tuple[int, ...], int]] = []
    for direction in ("fw", "bw"):
        p = f"lstm_{direction}."
        specs += [
            (p + "w_x", (d, 4 * h), d),
            (p + "w_h", (h, 4 * h), h),
            (p + "bias", (4 * h,), h),
            (p + "h0", (h,), h),
            (p + "c0", (h,), h),
        ]
    specs += [
        ("biaffine.u1", (h, r, h), h),
        ("biaffine.u2", (2 * h, r), 2 * h),
        ("biaffine.bias", (r,), 2 * h),
        ("residual.proj", (r, d), r),
    ]
    return specs


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, _ in param_specs(config)}


class ModelParams:
    """Named trainable tensors; iteration follows param_specs order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    @classmethod
    def initialize(
        cls, config: ModelConfig, rng_seed: int, dtype=np.float32
    ) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for every array,
        including the trainable initial LSTM states."""
        rng = np.random.default_rng(rng_seed)
        tensors: dict[str, Tensor] = {}
        for name, shape, fan_in in param_specs(config):
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape).astype(dtype)
            tensors[name] = Tensor(arr, requires_grad=True)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value for k, t in self.tensors.items()}

    def clone(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(t.value.copy(), requires_grad=True) for k, t in self.tensors.items()}
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            {k: Tensor(t.value.astype(dtype), requires_grad=True) for k, t in self.tensors.items()}
        )


@dataclass
class SpanRep:
    """A candidate span with its pooled representation vector."""

    sentence_id: str
    start: int
    end: int
    vector: Tensor
    label: str = NON_ENTITY


def _lstm_direction(
    embeds: Tensor, wx: Tensor, wh: Tensor, bias: Tensor, h0: Tensor, c0: Tensor,
    hidden: int, reverse: bool,
) -> Tensor:
    n = embeds.shape[0]
    gx = ag.matmul(embeds, wx)  # (n, 4h), input contribution for every step
    order = range(n - 1, -1, -1) if reverse else range(n)
    h, c = h0, c0
    rows: list[Tensor | None] = [None] * n
    for t in order:
        z = ag.add(ag.add(gx[t], ag.matmul(h, wh)), bias)
        i_gate = ag.sigmoid(z[0:hidden])
        f_gate = ag.sigmoid(z[hidden : 2 * hidden])
        g_gate = ag.tanh(z[2 * hidden : 3 * hidden])
        o_gate = ag.sigmoid(z[3 * hidden : 4 * hidden])
        c = ag.add(ag.mul(f_gate, c), ag.mul(i_gate, g_gate))
        h = ag.mul(o_gate, ag.tanh(c))
        rows[t] = h
    return ag.stack(rows, axis=0)


def bilstm_forward(
    embeds: Tensor, params: ModelParams, config: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Run both LSTM directions; returns (H_f, H_b), each (n, h), where row
    t of H_b is the backward state after reading tokens n..t+1."""
    if embeds.ndim != 2 or embeds.shape[1] != config.d:
        raise ag.DimensionError(
            f"bilstm_forward: embeddings shape {embeds.shape} incompatible with d={config.d}"
        )
    hf = _lstm_direction(
        embeds,
        params["lstm_fw.w_x"], params["lstm_fw.w_h"], params["lstm_fw.bias"],
        params["lstm_fw.h0"], params["lstm_fw.c0"],
        config.h, reverse=False,
    )
    hb = _lstm_direction(
        embeds,
        params["lstm_bw.w_x"], params["lstm_bw.w_h"], params["lstm_bw.bias"],
        params["lstm_bw.h0"], params["lstm_bw.c0"],
        config.h, reverse=True,
    )
    return hf, hb


def biaffine_raw(
    hf: Tensor, hb: Tensor, params: ModelParams, config: ModelConfig
) -> Tensor:
    """Word-pair scores before normalization and dropout, shape (n, n, r)."""
    h = config.h
    n = hf.shape[0]
    u1 = params["biaffine.u1"]
    u2 = params["biaffine.u2"]
    bias = params["biaffine.bias"]
    bil = ag.pairwise_bilinear(hf, u1, hb)
    left = ag.reshape(ag.matmul(hf, u2[0:h]), (n, 1, config.r))
    right = ag.reshape(ag.matmul(hb, u2[h : 2 * h]), (1, n, config.r))
    return ag.add(ag.add(ag.add(bil, left), right), bias)


def layer_norm(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Parameter-free layer normalization over the last axis."""
    mu = ag.tmean(t, axis=-1, keepdims=True)
    centered = ag.sub(t, mu)
    var = ag.tmean(ag.mul(centered, centered), axis=-1, keepdims=True)
    return ag.mul(centered, ag.pow_const(ag.add(var, eps), -0.5))


def biaffine_scores(
    hf: Tensor,
    hb: Tensor,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Normalized (and, in training, dropped-out) word-pair scores."""
    if not config.use_biaffine:
        raise ValueError("biaffine_scores called with use_biaffine disabled")
    scores = layer_norm(biaffine_raw(hf, hb, params, config))
    if train and config.dropout > 0.0:
        if dropout_rng is None:
            dropout_rng = np.random.default_rng(0)
        scores = ag.dropout(scores, config.dropout, dropout_rng)
    return scores


def word_dependency_features(
    scores: Tensor | None,
    embeds: Tensor,
    params: ModelParams,
    config: ModelConfig,
) -> Tensor:
    """Per-word vectors V (n, d): projected mean of the word's score rows
    plus, with use_residual, the raw embedding."""
    if not config.use_biaffine:
        return embeds
    pooled = ag.tmean(scores, axis=1)  # (n, r)
    projected = ag.matmul(pooled, params["residual.proj"])  # (n, d)
    if config.use_residual:
        return ag.add(projected, embeds)
    return projected


def span_vector(features: Tensor, start: int, end: int) -> Tensor:
    """Elementwise max over rows start..end (1-based, inclusive)."""
    n = features.shape[0]
    if not 1 <= start <= end <= n:
        raise ValueError(f"span ({start}, {end}) out of range for {n} rows")
    return ag.tmax(features[start - 1 : end], axis=0)


def model_forward(
    sentence: Sentence,
    embeds: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    train: bool = False,
    dropout_seed: int = 0,
) -> list[SpanRep]:
    """Compute representations for every candidate span of one sentence.

    Spans matching an annotation carry its label; all others carry the
    NON_ENTITY sentinel. Dropout fires only when train=True and is fully
    determined by dropout_seed.
    """
    n = len(sentence.tokens)
    embeds = np.asarray(embeds)
    if embeds.shape != (n, config.d):
        raise ag.DimensionError(
            f"sentence {sentence.id!r}: embeddings shape {embeds.shape}, "
            f"expected ({n}, {config.d})"
        )
    x = Tensor(embeds)
    if config.use_biaffine:
        hf, hb = bilstm_forward(x, params, config)
        rng = np.random.default_rng(dropout_seed) if train else None
        scores = biaffine_scores(hf, hb, params, config, train=train, dropout_rng=rng)
        feats = word_dependency_features(scores, x, params, config)
    else:
        feats = word_dependency_features(None, x, params, config)
    labels = annotation_index(sentence)
    reps = []
    for start, end in enumerate_spans(sentence, config.max_len):
        reps.append(
            SpanRep(
                sentence_id=sentence.id,
                start=start,
                end=end,
                vector=span_vector(feats, start, end),
                label=labels.get((start, end), NON_ENTITY),
            )
        )
    return reps


def save_checkpoint(
    params: ModelParams,
    config: ModelConfig,
    path: str | Path,
    seed: int | None = None,
    source_labels: Sequence[str] | None = None,
) -> None:
    """Write a checkpoint: one JSON manifest line, then a float32
    little-endian blob holding every tensor at its recorded byte offset."""
    entries = []
    blobs = []
    offset = 0
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor.value, dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "seed": seed,
        "source_labels": list(source_labels) if source_labels is not None else None,
        "tensors": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest).encode("utf-8"))
        fh.write(b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, dict]:
    """Read a checkpoint; returns (params, config, manifest). Shapes are
    validated against the stored config and the blob length."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("checkpoint has no manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint config: {exc}") from exc
    blob = raw[nl + 1 :]
    shapes = expected_shapes(config)
    entries = manifest.get("tensors", [])
    if [e.get("name") for e in entries] != list(shapes):
        raise CheckpointError("checkpoint tensor directory does not match the config")
    tensors: dict[str, Tensor] = {}
    offset = 0
    for entry in entries:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if shape != shapes[name]:
            raise CheckpointError(
                f"tensor {name!r} has shape {shape}, config requires {shapes[name]}"
            )
        if entry["offset"] != offset:
            raise CheckpointError(
                f"tensor {name!r} at offset {entry['offset']}, expected {offset}"
            )
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(blob):
            raise CheckpointError(
                f"checkpoint blob truncated at tensor {name!r} (offset {offset})"
            )
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = Tensor(arr.copy(), requires_grad=True)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(
            f"checkpoint blob has {len(blob)} bytes, directory accounts for {offset}"
        )
    return ModelParams(tensors), config, manifest

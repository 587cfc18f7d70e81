"""Encode a corpus with a pretrained transformer and write SPNE files.

Each corpus token receives exactly one vector: the tokenizer's subword
pieces are mapped back to their source token and, under mean pooling,
averaged. The encoder runs in evaluation mode under no_grad, so a job
re-run yields a byte-identical SPNE body. A manifest JSON records the
encoder id, layer, pooling, width and the corpus digest for auditing.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusSentence, read_corpus
from .spne import write_spne

log = logging.getLogger("spne_exporter")

DEFAULT_ENCODER = "bert-base-multilingual-cased"
MANIFEST_VERSION = 1

__all__ = [
    "DEFAULT_ENCODER",
    "AlignmentError",
    "ExportError",
    "ExportJob",
    "export_embeddings",
    "load_encoder",
]


class ExportError(RuntimeError):
    pass


class AlignmentError(ExportError):
    """A corpus token could not be matched to any encoder piece."""


@dataclass
class ExportJob:
    corpus: Path
    out: Path
    encoder: str = DEFAULT_ENCODER
    layer: int = -1  # index into the encoder's hidden-state stack
    pooling: str = "mean"
    batch_size: int = 8
    manifest: Path | None = None

    def __post_init__(self):
        self.corpus = Path(self.corpus)
        self.out = Path(self.out)
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling {self.pooling!r}; only 'mean'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.manifest is None:
            self.manifest = self.out.with_name(self.out.name + ".manifest.json")
        else:
            self.manifest = Path(self.manifest)


def load_encoder(name: str):
    """Load tokenizer and model (hub id or local directory), eval mode."""
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name)
    if not tokenizer.is_fast:
        raise ExportError(
            f"encoder {name!r} has no fast tokenizer; piece-to-word alignment "
            "requires one"
        )
    model = AutoModel.from_pretrained(name)
    model.eval()
    return tokenizer, model


def _encode_batch(
    batch: list[CorpusSentence], tokenizer, model, layer: int
) -> list[np.ndarray]:
    import torch

    encoded = tokenizer(
        [list(s.tokens) for s in batch],
        is_split_into_words=True,
        padding=True,
        return_tensors="pt",
    )
    with torch.no_grad():
        output = model(**encoded, output_hidden_states=True)
    stack = output.hidden_states
    if not -len(stack) <= layer < len(stack):
        raise ExportError(
            f"layer {layer} out of range; encoder exposes {len(stack)} hidden states"
        )
    hidden = stack[layer]  # (batch, pieces, d)

    matrices: list[np.ndarray] = []
    for b, sentence in enumerate(batch):
        word_ids = encoded.word_ids(b)
        piece_rows: list[list[int]] = [[] for _ in sentence.tokens]
        for piece, word in enumerate(word_ids):
            if word is not None:
                piece_rows[word].append(piece)
        rows = np.empty((len(sentence.tokens), hidden.shape[-1]), dtype="<f4")
        for t, pieces in enumerate(piece_rows):
            if not pieces:
                raise AlignmentError(
                    f"sentence {sentence.id!r}: token {t + 1} "
                    f"({sentence.tokens[t]!r}) left no pieces after tokenization"
                )
            rows[t] = hidden[b, pieces].mean(dim=0).numpy().astype("<f4")
        matrices.append(rows)
    return matrices


def export_embeddings(job: ExportJob, tokenizer=None, model=None) -> dict:
    """Run the job; returns the manifest written next to the SPNE file.

    Pass a preloaded (tokenizer, model) pair to skip load_encoder, e.g.
    for offline or custom encoders.
    """
    sentences = read_corpus(job.corpus)
    if tokenizer is None or model is None:
        log.info("loading encoder %s", job.encoder)
        tokenizer, model = load_encoder(job.encoder)

    def records():
        for start in range(0, len(sentences), job.batch_size):
            batch = sentences[start : start + job.batch_size]
            for sentence, matrix in zip(batch, _encode_batch(batch, tokenizer, model, job.layer)):
                yield sentence.id, matrix

    count = write_spne(job.out, records())
    d = model.config.hidden_size
    manifest = {
        "format": "spne-export-manifest",
        "version": MANIFEST_VERSION,
        "encoder": job.encoder,
        "layer": job.layer,
        "pooling": job.pooling,
        "d": int(d),
        "sentences": count,
        "corpus_sha256": hashlib.sha256(job.corpus.read_bytes()).hexdigest(),
        "output": job.out.name,
    }
    job.manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d sentences (d=%d) to %s", count, d, job.out)
    return manifest

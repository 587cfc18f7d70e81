"""Transformer-to-SPNE embedding export for the spancl span labeler.

Reads a corpus (JSONL of tokenized sentences), encodes it with a
pretrained transformer, mean-pools subword pieces back onto the original
tokens, and writes the vectors as an SPNE file with a manifest recording
encoder, layer, pooling and corpus digest.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .corpus import CorpusError, CorpusSentence, read_corpus
from .export import (
    DEFAULT_ENCODER,
    AlignmentError,
    ExportError,
    ExportJob,
    export_embeddings,
    load_encoder,
)
from .spne import MAGIC, VERSION, SpneFormatError, read_spne, write_spne

__all__ = [
    "__version__",
    "DEFAULT_ENCODER",
    "MAGIC",
    "VERSION",
    "AlignmentError",
    "CorpusError",
    "CorpusSentence",
    "ExportError",
    "ExportJob",
    "SpneFormatError",
    "export_embeddings",
    "load_encoder",
    "read_corpus",
    "read_spne",
    "write_spne",
]

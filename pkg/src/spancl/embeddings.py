"""Per-token embedding providers and the SPNE binary exchange format.

SPNE layout, all little-endian: magic ``SPNE``, u16 version (currently 1),
u32 embedding width d, then one record per sentence: u32 id byte length,
UTF-8 id bytes, u32 row count n, and n*d float32 values row-major.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Sentence

MAGIC = b"SPNE"
VERSION = 1

__all__ = [
    "MAGIC",
    "VERSION",
    "EmbeddedSentence",
    "EmbeddingError",
    "EmbeddingFormatError",
    "EmbeddingCorruptionError",
    "MissingEmbeddingError",
    "EmbeddingSource",
    "FileEmbeddingSource",
    "SyntheticEmbeddingSource",
    "read_embedding_file",
    "write_embedding_file",
    "synthetic_embeddings",
    "validate_alignment",
]


class EmbeddingError(Exception):
    """Base class for embedding-layer failures."""


class EmbeddingFormatError(EmbeddingError):
    """Bad magic, unsupported version, or inconsistent widths."""


class EmbeddingCorruptionError(EmbeddingError):
    """Structurally truncated or damaged file; message carries the byte offset."""


class MissingEmbeddingError(EmbeddingError, KeyError):
    """Lookup of a sentence id the source does not hold."""

    def __str__(self) -> str:  # KeyError quotes its arg; keep a plain message
        return self.args[0] if self.args else ""


@dataclass(frozen=True)
class EmbeddedSentence:
    """Float32 matrix of per-token vectors for one sentence."""

    sentence_id: str
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise EmbeddingFormatError(
                f"sentence {self.sentence_id!r}: vectors must be 2-D, got shape {self.vectors.shape}"
            )

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


class EmbeddingSource:
    """Maps sentence ids to embedded sentences of a fixed width d."""

    kind = "abstract"

    def __init__(self, d: int):
        self.d = int(d)

    def lookup(self, sentence_id: str) -> EmbeddedSentence:
        raise NotImplementedError

    def __contains__(self, sentence_id: str) -> bool:
        try:
            self.lookup(sentence_id)
        except MissingEmbeddingError:
            return False
        return True


class FileEmbeddingSource(EmbeddingSource):
    kind = "file"

    def __init__(self, d: int, table: dict[str, np.ndarray]):
        super().__init__(d)
        self._table = table

    def lookup(self, sentence_id: str) -> EmbeddedSentence:
        try:
            vectors = self._table[sentence_id]
        except KeyError:
            raise MissingEmbeddingError(
                f"no embeddings stored for sentence id {sentence_id!r}"
            ) from None
        return EmbeddedSentence(sentence_id, vectors)

    def ids(self) -> list[str]:
        return list(self._table)


class SyntheticEmbeddingSource(EmbeddingSource):
    """Deterministic pseudo-random embeddings for tests and dry runs.

    Each token vector is a pure function of (seed, sentence_id, token index)
    with components uniform in [-1, 1]. When class_signal maps labels to
    unit vectors, every token covered by an annotation of label L gets
    class_signal[L] added, once per covering annotation.
    """

    kind = "synthetic"

    def __init__(
        self,
        sentences: Sequence[Sentence],
        seed: int,
        d: int,
        class_signal: Mapping[str, np.ndarray] | None = None,
    ):
        super().__init__(d)
        self.seed = int(seed)
        self._sentences = {s.id: s for s in sentences}
        self._signal = {}
        if class_signal:
            for label, vec in class_signal.items():
                arr = np.asarray(vec, dtype=np.float32)
                if arr.shape != (d,):
                    raise EmbeddingFormatError(
                        f"class signal for {label!r} has shape {arr.shape}, expected ({d},)"
                    )
                self._signal[label] = arr
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, sentence_id: str, index: int) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self.seed}:{sentence_id}:{index}".encode(), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.uniform(-1.0, 1.0, self.d).astype(np.float32)

    def lookup(self, sentence_id: str) -> EmbeddedSentence:
        if sentence_id in self._cache:
            return EmbeddedSentence(sentence_id, self._cache[sentence_id])
        sent = self._sentences.get(sentence_id)
        if sent is None:
            raise MissingEmbeddingError(
                f"no sentence registered under id {sentence_id!r}"
            )
        rows = np.stack(
            [self._token_vector(sentence_id, t) for t in range(len(sent.tokens))]
        )
        if self._signal:
            for ann in sent.annotations:
                sig = self._signal.get(ann.label)
                if sig is not None:
                    rows[ann.start - 1 : ann.end] += sig
        rows = rows.astype(np.float32)
        self._cache[sentence_id] = rows
        return EmbeddedSentence(sentence_id, rows)


def synthetic_embeddings(
    sentences: Sequence[Sentence],
    seed: int,
    d: int,
    class_signal: Mapping[str, np.ndarray] | None = None,
) -> SyntheticEmbeddingSource:
    return SyntheticEmbeddingSource(sentences, seed, d, class_signal)


def write_embedding_file(
    path: str | Path, records: Iterable[EmbeddedSentence | tuple[str, np.ndarray]]
) -> int:
    """Write records to an SPNE file; returns the number of sentences written.

    All matrices must share one width; values are stored as little-endian
    float32 exactly as given (bit-for-bit, signed zeros included).
    """
    d: int | None = None
    count = 0
    with open(path, "wb") as fh:
        header_written = False
        for rec in records:
            if isinstance(rec, EmbeddedSentence):
                sid, mat = rec.sentence_id, rec.vectors
            else:
                sid, mat = rec
            mat = np.ascontiguousarray(mat, dtype="<f4")
            if mat.ndim != 2:
                raise EmbeddingFormatError(
                    f"sentence {sid!r}: expected a 2-D matrix, got shape {mat.shape}"
                )
            if d is None:
                d = mat.shape[1]
                fh.write(MAGIC)
                fh.write(struct.pack("<HI", VERSION, d))
                header_written = True
            elif mat.shape[1] != d:
                raise EmbeddingFormatError(
                    f"sentence {sid!r}: width {mat.shape[1]} != file width {d}"
                )
            id_bytes = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(mat.tobytes())
            count += 1
        if not header_written:
            raise EmbeddingFormatError("cannot write an SPNE file with zero records")
    return count


def read_embedding_file(path: str | Path) -> FileEmbeddingSource:
    """Read an SPNE file eagerly into a lookup table."""
    data = Path(path).read_bytes()
    offset = 0

    def need(nbytes: int, what: str) -> bytes:
        nonlocal offset
        if offset + nbytes > len(data):
            raise EmbeddingCorruptionError(
                f"truncated SPNE file: needed {nbytes} bytes for {what} "
                f"at byte offset {offset}, file has {len(data)}"
            )
        chunk = data[offset : offset + nbytes]
        offset += nbytes
        return chunk

    magic = need(4, "magic")
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", need(2, "version"))
    if version != VERSION:
        raise EmbeddingFormatError(f"unsupported SPNE version {version}")
    (d,) = struct.unpack("<I", need(4, "width"))
    if d < 1:
        raise EmbeddingFormatError(f"embedding width must be >= 1, got {d}")
    table: dict[str, np.ndarray] = {}
    while offset < len(data):
        (id_len,) = struct.unpack("<I", need(4, "id length"))
        sid = need(id_len, "sentence id").decode("utf-8")
        (n,) = struct.unpack("<I", need(4, "row count"))
        raw = need(4 * n * d, f"matrix for {sid!r}")
        table[sid] = np.frombuffer(raw, dtype="<f4").reshape(n, d).copy()
    return FileEmbeddingSource(d, table)


def validate_alignment(source: EmbeddingSource, sentences: Iterable[Sentence]) -> None:
    """Check that every sentence has embeddings with one row per token."""
    for sent in sentences:
        emb = source.lookup(sent.id)
        if emb.vectors.shape[0] != len(sent.tokens):
            raise EmbeddingFormatError(
                f"sentence {sent.id!r}: {emb.vectors.shape[0]} embedding rows "
                f"for {len(sent.tokens)} tokens"
            )
        if emb.d != source.d:
            raise EmbeddingFormatError(
                f"sentence {sent.id!r}: width {emb.d} != source width {source.d}"
            )

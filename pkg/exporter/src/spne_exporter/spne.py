"""SPNE binary writing, plus a reader used only for verification.

Layout, all little-endian: magic ``SPNE``, u16 version (1), u32 embedding
width d; then one record per sentence: u32 id byte length, UTF-8 id bytes,
u32 row count n, and n*d float32 values row-major. Values are written
bit-for-bit as given.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"SPNE"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "SpneFormatError", "write_spne", "read_spne"]


class SpneFormatError(ValueError):
    pass


def write_spne(path: str | Path, records: Iterable[tuple[str, np.ndarray]]) -> int:
    """Write (sentence_id, matrix) records; returns the sentence count."""
    d: int | None = None
    count = 0
    with open(path, "wb") as fh:
        for sid, mat in records:
            mat = np.ascontiguousarray(mat, dtype="<f4")
            if mat.ndim != 2:
                raise SpneFormatError(
                    f"sentence {sid!r}: expected a 2-D matrix, got shape {mat.shape}"
                )
            if d is None:
                d = mat.shape[1]
                fh.write(MAGIC)
                fh.write(struct.pack("<HI", VERSION, d))
            elif mat.shape[1] != d:
                raise SpneFormatError(
                    f"sentence {sid!r}: width {mat.shape[1]} != file width {d}"
                )
            id_bytes = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(mat.tobytes())
            count += 1
        if d is None:
            raise SpneFormatError("cannot write an SPNE file with zero records")
    return count


def read_spne(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Parse an SPNE file back into (id, matrix) pairs, file order."""
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != MAGIC:
        raise SpneFormatError(f"{path}: not an SPNE file")
    version, d = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise SpneFormatError(f"{path}: unsupported version {version}")
    offset = 10
    records: list[tuple[str, np.ndarray]] = []

    def need(nbytes: int, what: str) -> int:
        if offset + nbytes > len(data):
            raise SpneFormatError(
                f"{path}: truncated at byte offset {offset} reading {what}"
            )
        return offset + nbytes

    while offset < len(data):
        end = need(4, "id length")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset = end
        end = need(id_len, "sentence id")
        sid = data[offset:end].decode("utf-8")
        offset = end
        end = need(4, "row count")
        (n,) = struct.unpack_from("<I", data, offset)
        offset = end
        end = need(n * d * 4, f"rows of {sid!r}")
        mat = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset)
        records.append((sid, mat.reshape(n, d).copy()))
        offset = end
    return records

"""Command line entry: spne-export."""
from __future__ import annotations

import argparse
import logging
import sys

from .corpus import CorpusError
from .export import DEFAULT_ENCODER, ExportError, ExportJob, export_embeddings
from .spne import SpneFormatError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spne-export",
        description="Encode a corpus with a pretrained transformer and write "
        "per-token embeddings in the SPNE format plus an audit manifest.",
    )
    parser.add_argument("--corpus", required=True, help="corpus JSONL path")
    parser.add_argument("--out", required=True, help="output SPNE path")
    parser.add_argument(
        "--encoder",
        default=DEFAULT_ENCODER,
        help=f"hub id or local directory (default {DEFAULT_ENCODER})",
    )
    parser.add_argument(
        "--layer", type=int, default=-1,
        help="hidden-state index to export (default -1, the last layer)",
    )
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument(
        "--manifest", default=None,
        help="manifest path (default <out>.manifest.json)",
    )
    return parser


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:  # argparse exits 2 on usage errors; remap
        return 0 if err.code == 0 else 1
    job_error = (CorpusError, ExportError, SpneFormatError, ValueError,
                 FileNotFoundError, IsADirectoryError, PermissionError)
    try:
        job = ExportJob(
            corpus=args.corpus,
            out=args.out,
            encoder=args.encoder,
            layer=args.layer,
            batch_size=args.batch_size,
            manifest=args.manifest,
        )
        export_embeddings(job)
    except job_error as err:
        logging.getLogger("spne_exporter").error("%s", err)
        return 1
    except Exception:
        logging.getLogger("spne_exporter").exception("export failed")
        return 2
    return 0


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))

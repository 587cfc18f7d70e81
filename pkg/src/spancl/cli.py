"""Command-line interface.

Subcommands: train, finetune, predict, evaluate, sample-episodes,
dump-reps, grad-check. Options may come from a JSON config file
(--config) using flag names as keys; explicit flags win. Every run that
writes files records its resolved configuration, seed included, in a
sibling JSON file. Log verbosity comes from the SPANCL_LOG environment
variable (error, info or debug). Exit status: 0 success, 1 bad input or
failed check, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._util import derive_seed, stable_json
from .corpus import (
    CorpusFormatError,
    Episode,
    LabelSet,
    SamplingError,
    SpanValidationError,
    load_corpus,
    sample_episode,
)
from .embeddings import EmbeddingError, read_embedding_file, validate_alignment
from .evaluation import EvaluationError, span_prf1
from .model import (
    CheckpointError,
    ModelConfig,
    ModelParams,
    load_checkpoint,
    save_checkpoint,
    model_forward,
)
from .objective import LossConfig
from .protocol import (
    Prediction,
    ProtocolError,
    TrainPlan,
    default_finetune_steps,
    finetune_support,
    predict_episode,
    train_source,
)

log = logging.getLogger("spancl")

_VALIDATION_ERRORS = (
    CorpusFormatError,
    SpanValidationError,
    SamplingError,
    EmbeddingError,
    CheckpointError,
    EvaluationError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    ValueError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _setup_logging() -> None:
    level_name = os.environ.get("SPANCL_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ValueError(
            f"SPANCL_LOG must be one of error, info, debug; got {level_name!r}"
        )
    logging.basicConfig(
        level=levels[level_name],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


class _Options:
    """Flag values with JSON-config fallback; explicit flags win."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        path = getattr(args, "config", None)
        if path:
            with open(path, "r", encoding="utf-8") as fh:
                try:
                    self.config = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"config file {path}: invalid JSON ({exc.msg})")
            if not isinstance(self.config, dict):
                raise ValueError(f"config file {path} must hold a JSON object")

    def get(self, key: str, default=None, required: bool = False, cast=None):
        value = getattr(self.args, key.replace("-", "_"), None)
        if value is None:
            value = self.config.get(key, default)
        if value is None:
            if required:
                raise ValueError(f"missing required option --{key}")
            return None
        return cast(value) if cast else value

    def resolved(self) -> dict:
        merged = dict(self.config)
        for key, value in vars(self.args).items():
            if key in ("config", "func", "command") or value is None:
                continue
            merged[key.replace("_", "-")] = value
        return merged


def _write_run_record(target: Path, opts: _Options, seed: int) -> None:
    record = {
        "command": getattr(opts.args, "command", None),
        "options": opts.resolved(),
        "seed": seed,
    }
    if target.is_dir():
        out = target / "run_config.json"
    else:
        out = target.with_name(target.name + ".run.json")
    out.write_text(stable_json(record) + "\n", encoding="utf-8")


def _model_config(opts: _Options, d: int) -> ModelConfig:
    cfg_d = opts.get("d", cast=int)
    if cfg_d is not None and cfg_d != d:
        raise ValueError(f"configured d={cfg_d} but embeddings have width {d}")
    return ModelConfig(
        d=d,
        h=opts.get("h", 512, cast=int),
        r=opts.get("r", 256, cast=int),
        dropout=opts.get("dropout", 0.2, cast=float),
        max_len=opts.get("max-len", 16, cast=int),
        use_biaffine=not opts.get("no-biaffine", False),
        use_residual=not opts.get("no-residual", False),
    )


def _loss_config(opts: _Options) -> LossConfig:
    return LossConfig(
        tau=opts.get("tau", 10.0, cast=float),
        bias=opts.get("loss-bias", 30.0, cast=float),
        max_negatives_per_anchor=opts.get("max-negatives", 64, cast=int),
    )


def _load_episode(path: str, index: int, pool) -> Episode:
    by_id = {s.id: s for s in pool}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not 0 <= index < len(lines):
        raise ValueError(f"episode index {index} out of range for {len(lines)} episodes")
    record = json.loads(lines[index])

    def pick(ids):
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ValueError(f"episode references unknown sentence ids: {missing[:5]}")
        return tuple(by_id[i] for i in ids)

    return Episode(
        way=record["way"],
        shot=record["shot"],
        support=pick(record["support_ids"]),
        query=pick(record["query_ids"]),
        label_set=LabelSet.of(record["labels"]),
    )


def _cmd_train(opts: _Options) -> int:
    pool = load_corpus(opts.get("corpus", required=True))
    source = read_embedding_file(opts.get("embeddings", required=True))
    validate_alignment(source, pool)
    seed = opts.get("seed", 0, cast=int)
    plan = TrainPlan(
        episodes_train=opts.get("episodes", 10_000, cast=int),
        episodes_valid=opts.get("valid-episodes", 500, cast=int),
        validate_every=opts.get("validate-every", 1_000, cast=int),
        way=opts.get("way", 5, cast=int),
        shot=opts.get("shot", 5, cast=int),
        learning_rate=opts.get("lr", 1e-3, cast=float),
        rng_seed=seed,
    )
    model_config = _model_config(opts, source.d)
    loss_config = _loss_config(opts)
    out_dir = Path(opts.get("out", required=True))
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_source(pool, plan, source, model_config, loss_config)
    save_checkpoint(
        result.params,
        model_config,
        out_dir / "model.ckpt",
        seed=seed,
        source_labels=result.source_labels,
    )
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for record in result.log:
            fh.write(json.dumps(record) + "\n")
    from .figures import save_training_curve

    save_training_curve(result.log, out_dir / "loss_curve.png")
    _write_run_record(out_dir, opts, seed)
    log.info(
        "trained %d episodes; best validation loss %.6f; checkpoint at %s",
        plan.episodes_train, result.best_validation_loss, out_dir / "model.ckpt",
    )
    return 0


def _cmd_finetune(opts: _Options) -> int:
    params, model_config, manifest = load_checkpoint(opts.get("checkpoint", required=True))
    pool = load_corpus(opts.get("corpus", required=True))
    source = read_embedding_file(opts.get("embeddings", required=True))
    episode = _load_episode(
        opts.get("episode", required=True), opts.get("index", 0, cast=int), pool
    )
    validate_alignment(source, episode.support)
    trained_labels = manifest.get("source_labels") or []
    overlap = sorted(set(trained_labels) & set(episode.label_set.labels))
    if overlap:
        log.warning(
            "episode labels overlap the training label set (%s); "
            "cross-domain transfer expects disjoint label inventories",
            ", ".join(overlap),
        )
    seed = opts.get("seed", 0, cast=int)
    steps = opts.get("steps", cast=int)
    if steps is None:
        steps = default_finetune_steps(episode.shot)
    tuned = finetune_support(
        params,
        episode.support,
        steps,
        source,
        model_config,
        _loss_config(opts),
        learning_rate=opts.get("lr", 1e-4, cast=float),
        rng_seed=seed,
    )
    out_dir = Path(opts.get("out", required=True))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        tuned,
        model_config,
        out_dir / "model.ckpt",
        seed=seed,
        source_labels=manifest.get("source_labels"),
    )
    _write_run_record(out_dir, opts, seed)
    log.info("fine-tuned %d steps; checkpoint at %s", steps, out_dir / "model.ckpt")
    return 0


def _cmd_predict(opts: _Options) -> int:
    params, model_config, _ = load_checkpoint(opts.get("checkpoint", required=True))
    pool = load_corpus(opts.get("corpus", required=True))
    source = read_embedding_file(opts.get("embeddings", required=True))
    episode = _load_episode(
        opts.get("episode", required=True), opts.get("index", 0, cast=int), pool
    )
    validate_alignment(source, list(episode.support) + list(episode.query))
    seed = opts.get("seed", 0, cast=int)
    predictions = predict_episode(
        params,
        episode,
        source,
        model_config,
        mode=opts.get("mode", "nn"),
        threshold=opts.get("threshold", cast=float),
        workers=opts.get("workers", 1, cast=int),
    )
    out_path = Path(opts.get("out", required=True))
    with open(out_path, "w", encoding="utf-8") as fh:
        for pred in predictions:
            fh.write(json.dumps(pred.to_record()) + "\n")
    _write_run_record(out_path, opts, seed)
    log.info("wrote %d predictions to %s", len(predictions), out_path)
    return 0


def _cmd_evaluate(opts: _Options) -> int:
    pred_path = opts.get("pred", required=True)
    predictions = []
    with open(pred_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                predictions.append(
                    Prediction(
                        sentence_id=rec["sentence_id"],
                        start=int(rec["start"]),
                        end=int(rec["end"]),
                        label=rec["type"] if "type" in rec else rec["label"],
                        score=float(rec.get("score", 0.0)),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{pred_path} line {lineno}: bad prediction record ({exc})")
    gold = load_corpus(opts.get("gold", required=True))
    episode_path = opts.get("episode")
    if episode_path:
        episode = _load_episode(episode_path, opts.get("index", 0, cast=int), gold)
        gold = list(episode.query)
    report = span_prf1(predictions, gold)
    rendered = stable_json(report.to_dict())
    print(rendered)
    out = opts.get("out")
    figure = opts.get("figure")
    if out:
        Path(out).write_text(rendered + "\n", encoding="utf-8")
        if figure is None:
            figure = str(Path(out).with_suffix(".png"))
        _write_run_record(Path(out), opts, opts.get("seed", 0, cast=int))
    if figure:
        from .figures import save_label_breakdown

        save_label_breakdown(report, figure)
    return 0


def _cmd_sample_episodes(opts: _Options) -> int:
    pool = load_corpus(opts.get("corpus", required=True))
    way = opts.get("way", 5, cast=int)
    shot = opts.get("shot", 5, cast=int)
    count = opts.get("count", 1, cast=int)
    seed = opts.get("seed", 0, cast=int)
    out_path = Path(opts.get("out", required=True))
    with open(out_path, "w", encoding="utf-8") as fh:
        for k in range(count):
            episode_seed = derive_seed(seed, "cli-episode", k)
            episode = sample_episode(pool, way, shot, episode_seed)
            fh.write(
                json.dumps(
                    {
                        "way": way,
                        "shot": shot,
                        "seed": episode_seed,
                        "labels": list(episode.label_set.labels),
                        "support_ids": [s.id for s in episode.support],
                        "query_ids": [s.id for s in episode.query],
                    }
                )
                + "\n"
            )
    _write_run_record(out_path, opts, seed)
    log.info("wrote %d episodes to %s", count, out_path)
    return 0


def _cmd_dump_reps(opts: _Options) -> int:
    pool = load_corpus(opts.get("corpus", required=True))
    source = read_embedding_file(opts.get("embeddings", required=True))
    validate_alignment(source, pool)
    seed = opts.get("seed", 0, cast=int)
    ckpt = opts.get("checkpoint")
    if ckpt:
        params, model_config, _ = load_checkpoint(ckpt)
    else:
        model_config = _model_config(opts, source.d)
        params = ModelParams.initialize(model_config, derive_seed(seed, "init"))
    from . import autograd as ag
    from .evaluation import dump_representations

    reps = []
    with ag.no_grad():
        for sent in pool:
            emb = source.lookup(sent.id)
            reps.extend(model_forward(sent, emb.vectors, params, model_config))
    out_path = Path(opts.get("out", required=True))
    dump_representations(reps, out_path)
    _write_run_record(out_path, opts, seed)
    log.info("dumped %d span representations to %s", len(reps), out_path)
    return 0


def _cmd_grad_check(opts: _Options) -> int:
    from .verify import full_pipeline_grad_check

    tolerance = opts.get("tolerance", 1e-4, cast=float)
    errors = full_pipeline_grad_check(seed=opts.get("seed", 0, cast=int))
    for name, err in errors.items():
        if name != "max":
            log.debug("gradient check %s: relative error %.3e", name, err)
    print(f"max relative error: {errors['max']:.6e} (tolerance {tolerance:.1e})")
    if errors["max"] > tolerance:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="spancl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spancl {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, help="root seed for all randomness")

    p = sub.add_parser("train", help="episodic source-domain training")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--out")
    p.add_argument("--episodes", type=int)
    p.add_argument("--valid-episodes", type=int)
    p.add_argument("--validate-every", type=int)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--h", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--no-biaffine", action="store_const", const=True)
    p.add_argument("--no-residual", action="store_const", const=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--loss-bias", type=float)
    p.add_argument("--max-negatives", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="adapt a checkpoint on episode support")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--episode")
    p.add_argument("--index", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--loss-bias", type=float)
    p.add_argument("--max-negatives", type=int)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("predict", help="label episode query spans")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--episode")
    p.add_argument("--index", type=int)
    p.add_argument("--mode", choices=["nn", "proto", "nnshot"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold spans")
    common(p)
    p.add_argument("--pred")
    p.add_argument("--gold")
    p.add_argument("--episode")
    p.add_argument("--index", type=int)
    p.add_argument("--out")
    p.add_argument("--figure")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sample-episodes", help="sample N-way K-shot episodes")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sample_episodes)

    p = sub.add_parser("dump-reps", help="write span representations as CSV")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--h", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-len", type=int)
    p.add_argument("--no-biaffine", action="store_const", const=True)
    p.add_argument("--no-residual", action="store_const", const=True)
    p.set_defaults(func=_cmd_dump_reps)

    p = sub.add_parser("grad-check", help="verify gradients against finite differences")
    common(p)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def dispatch(argv=None) -> int:
    try:
        _setup_logging()
    except ValueError as exc:
        print(f"spancl: {exc}", file=sys.stderr)
        return 1
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        opts = _Options(args)
        return args.func(opts)
    except _VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        print(f"spancl: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        log.error("%s", exc)
        print(f"spancl: runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("unhandled failure")
        print(f"spancl: runtime failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> None:
    raise SystemExit(dispatch(argv))


if __name__ == "__main__":
    main()

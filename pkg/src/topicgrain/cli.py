"""Command-line workflow: fit topics, train, index, search, evaluate, audit.

Subcommands: lda-train, train, encode, index, search, eval, space-report,
grad-check, synth. Exit codes: 0 success, 1 validation error, 2 runtime
error. All randomness flows from --seed (or the config file's seed).
Artifacts land in the artifacts directory under fixed names: vocab.tsv,
lda.tgld, encoder.tgck, index.tgix, run.trec, metrics.tsv, training.log.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import config as cfgmod
from . import corpus, index as indexmod, retrieval, synth, topics, trainer
from .corpus import CorpusLimits, TextKind
from .encoder import Encoder, Granularity, load_params
from .errors import (
    DuplicateId,
    EmptyCorpus,
    EmptyRun,
    EmptyText,
    FormatError,
    IncompatibleArtifacts,
    InvalidK,
    InvalidSpace,
    NumericalError,
    ParseError,
    ShapeError,
    TopicgrainError,
)
from .index import QuantScheme, RepresentationIndex, build_index
from .topics import LdaConfig, TopicExtractionConfig
from .trainer import TrainConfig, gradient_check, load_checkpoint, make_audit_model

_VALIDATION_ERRORS = (
    ParseError, DuplicateId, EmptyCorpus, EmptyText, FormatError,
    IncompatibleArtifacts, InvalidK, InvalidSpace, EmptyRun, ShapeError,
    ValueError, FileNotFoundError, KeyError, IsADirectoryError, NotADirectoryError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--scheme", choices=cfgmod.SCHEMES)
    p.add_argument("--granularity", choices=cfgmod.GRANULARITIES)
    p.add_argument("--k", type=int)
    p.add_argument("--theta-t", type=float, dest="theta_t")
    p.add_argument("--theta-wf", type=float, dest="theta_wf")
    p.add_argument("--theta-wr", type=float, dest="theta_wr")
    p.add_argument("--topics", type=int)
    p.add_argument("--normalize", choices=("on", "off"))
    p.add_argument("--m", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--train-iters", type=int, dest="train_iters")
    p.add_argument("--infer-iters", type=int, dest="infer_iters")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--artifacts", default="artifacts")


_OVERRIDE_KEYS = (
    "seed", "threads", "dim", "scheme", "granularity", "k",
    "theta_t", "theta_wf", "theta_wr", "topics", "m", "epochs",
    "batch_size", "learning_rate", "train_iters", "infer_iters", "min_count",
)


def _resolve_config(args) -> cfgmod.RunConfig:
    file_values = None
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_values = cfgmod.parse_config_text(fh.read(), args.config)
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    if getattr(args, "normalize", None) is not None:
        overrides["normalize"] = args.normalize == "on"
    return cfgmod.config_from_sources(file_values, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="topicgrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-topic dataset")
    _add_config_flags(p)
    p.add_argument("--docs", type=int, default=2000)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--out", default="synth_data")
    p.add_argument("--doc-len", type=int, default=160, dest="doc_len")
    p.add_argument("--query-len", type=int, default=8, dest="query_len")
    p.add_argument("--words-per-topic", type=int, default=60, dest="words_per_topic")
    p.add_argument("--triples-per-query", type=int, default=2, dest="triples_per_query")
    p.add_argument("--negatives", type=int, default=2)
    p.add_argument("--topics-per-doc", type=int, default=2, dest="topics_per_doc")

    p = sub.add_parser("lda-train", help="build the vocabulary and fit the topic model")
    _add_config_flags(p)
    p.add_argument("--collection", required=True)

    p = sub.add_parser("train", help="train the encoder on triples")
    _add_config_flags(p)
    p.add_argument("--collection", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--triples", required=True)

    p = sub.add_parser("encode", help="encode any id<TAB>text file into a .tgix store")
    _add_config_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=("query", "document"), default="document")
    p.add_argument("--out")

    p = sub.add_parser("index", help="encode the collection into the document index")
    _add_config_flags(p)
    p.add_argument("--collection", required=True)

    p = sub.add_parser("search", help="rank the index for every query")
    _add_config_flags(p)
    p.add_argument("--queries", required=True)

    p = sub.add_parser("eval", help="score a run file against qrels")
    _add_config_flags(p)
    p.add_argument("--run")
    p.add_argument("--qrels", required=True)
    p.add_argument("--with-space", action="store_true", dest="with_space")

    p = sub.add_parser("space-report", help="byte accounting of an index")
    _add_config_flags(p)
    p.add_argument("--index", dest="index_path")

    p = sub.add_parser("grad-check", help="audit analytic gradients on a tiny model")
    _add_config_flags(p)
    p.add_argument("--tolerance", type=float, default=1e-4)

    return parser


def _artifact(args, name: str) -> str:
    return os.path.join(args.artifacts, name)


def _limits(cfg: cfgmod.RunConfig) -> CorpusLimits:
    return CorpusLimits(cfg.max_query_len, cfg.max_doc_len)


def _lda_config(cfg: cfgmod.RunConfig) -> LdaConfig:
    return LdaConfig(cfg.topics, cfg.alpha, cfg.eta, cfg.train_iters,
                     cfg.infer_iters, cfg.seed)


def _extraction(cfg: cfgmod.RunConfig) -> TopicExtractionConfig:
    return TopicExtractionConfig(cfg.theta_t, cfg.theta_wf, cfg.theta_wr)


def _fingerprint(args, cfg: cfgmod.RunConfig) -> bytes:
    return cfgmod.fingerprint(cfg, cfgmod.digest_file(_artifact(args, "vocab.tsv")))


def _check_lda_matches(lda, cfg: cfgmod.RunConfig) -> None:
    lc = lda.config
    if (lc.k, lc.alpha, lc.eta, lc.seed, lc.train_iters, lc.infer_iters) != (
        cfg.topics, cfg.alpha, cfg.eta, cfg.seed, cfg.train_iters, cfg.infer_iters
    ):
        raise IncompatibleArtifacts(
            "lda.tgld was fitted under a different configuration; re-run lda-train"
        )


def _load_chain(args, cfg: cfgmod.RunConfig):
    """vocab + lda + checkpoint, verified against this config's fingerprint."""
    vocab = corpus.Vocab.load(_artifact(args, "vocab.tsv"))
    lda = topics.load_lda(_artifact(args, "lda.tgld"))
    _check_lda_matches(lda, cfg)
    ck = load_checkpoint(_artifact(args, "encoder.tgck"))
    expected = _fingerprint(args, cfg)
    if ck.fingerprint != expected:
        raise IncompatibleArtifacts(
            "encoder.tgck fingerprint does not match this config + vocabulary"
        )
    enc = Encoder(ck.params, vocab, lda, _extraction(cfg), _limits(cfg), cfg.normalize)
    return vocab, lda, ck, enc, expected


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    spec = synth.SynthSpec(
        topics=cfg.topics, docs=args.docs, queries=args.queries, seed=cfg.seed,
        words_per_topic=args.words_per_topic, doc_len=args.doc_len,
        query_len=args.query_len, topics_per_doc=args.topics_per_doc,
        triples_per_query=args.triples_per_query, negatives=args.negatives,
    )
    paths = synth.write_dataset(args.out, spec)
    for name in ("collection", "queries", "qrels", "triples"):
        print(f"{name}\t{paths[name]}")
    return 0


def _cmd_lda_train(args) -> int:
    cfg = _resolve_config(args)
    collection = corpus.ingest(args.collection, "collection")
    vocab = corpus.build_vocab(collection.values(), cfg.min_count)
    os.makedirs(args.artifacts, exist_ok=True)
    vocab.save(_artifact(args, "vocab.tsv"))
    model = topics.fit_lda(collection, vocab, _lda_config(cfg), _limits(cfg))
    topics.save_lda(model, _artifact(args, "lda.tgld"))
    print(f"vocab\t{len(vocab)}")
    print(f"lda\t{_artifact(args, 'lda.tgld')}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    collection = corpus.ingest(args.collection, "collection")
    queries = corpus.ingest(args.queries, "queries")
    training_set = corpus.ingest(args.triples, "triples")
    if training_set.m != cfg.m:
        raise ValueError(
            f"triples carry {training_set.m} negatives per query; config m is {cfg.m} "
            f"(pass --m {training_set.m})"
        )
    vocab = corpus.Vocab.load(_artifact(args, "vocab.tsv"))
    lda = topics.load_lda(_artifact(args, "lda.tgld"))
    _check_lda_matches(lda, cfg)
    train_cfg = TrainConfig(
        m=cfg.m, batch_size=cfg.batch_size, epochs=cfg.epochs,
        learning_rate=cfg.learning_rate, optimizer=cfg.optimizer,
        adam_beta1=cfg.adam_beta1, adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps,
        seed=cfg.seed, normalize=cfg.normalize,
        granularity=Granularity(cfg.granularity),
    )
    log_lines: list[str] = []

    def on_epoch(epoch: int, mean_loss: float) -> None:
        log_lines.append(f"{epoch}\t{mean_loss:.6f}")
        print(f"epoch\t{epoch}\tmean_loss\t{mean_loss:.6f}")

    ck = trainer.train(
        train_cfg, training_set, collection, queries, lda, vocab,
        _extraction(cfg), _limits(cfg), cfg.d_c, cfg.d_a, cfg.dim,
        _fingerprint(args, cfg), on_epoch=on_epoch,
    )
    trainer.save_checkpoint(ck, _artifact(args, "encoder.tgck"))
    with open(_artifact(args, "training.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + ("\n" if log_lines else ""))
    if ck.aborted:
        print("training diverged; kept the last finite checkpoint", file=sys.stderr)
        return 2
    print(f"checkpoint\t{_artifact(args, 'encoder.tgck')}")
    return 0


def _cmd_encode(args) -> int:
    cfg = _resolve_config(args)
    texts = corpus.ingest(args.input, "collection")
    _, _, _, enc, fp = _load_chain(args, cfg)
    out = args.out or _artifact(args, "encoded.tgix")
    kind = TextKind.QUERY if args.kind == "query" else TextKind.DOCUMENT
    idx = build_index(
        texts, enc, QuantScheme(cfg.scheme), Granularity(cfg.granularity),
        out, fp, threads=cfg.threads, kind=kind,
    )
    stats = idx.space_stats()
    print(f"encoded\t{len(idx)}\tentries\t{stats.embeddings_stored}\tbytes\t{stats.total_bytes}")
    return 0


def _cmd_index(args) -> int:
    cfg = _resolve_config(args)
    collection = corpus.ingest(args.collection, "collection")
    _, _, ck, enc, fp = _load_chain(args, cfg)
    idx = build_index(
        collection, enc, QuantScheme(cfg.scheme), Granularity(cfg.granularity),
        _artifact(args, "index.tgix"), ck.fingerprint, expected_fingerprint=fp,
        threads=cfg.threads,
    )
    stats = idx.space_stats()
    print(f"docs\t{stats.docs}")
    print(f"entries\t{stats.embeddings_stored}")
    print(f"payload_bytes\t{stats.payload_bytes}")
    print(f"total_bytes\t{stats.total_bytes}")
    return 0


def _cmd_search(args) -> int:
    cfg = _resolve_config(args)
    queries = corpus.ingest(args.queries, "queries")
    _, _, _, enc, fp = _load_chain(args, cfg)
    idx = RepresentationIndex.load(_artifact(args, "index.tgix"))
    if idx.fingerprint != fp:
        raise IncompatibleArtifacts(
            "index.tgix fingerprint does not match this config + vocabulary"
        )
    qids = list(queries)

    def run_one(qid: str) -> retrieval.RankedList:
        rep = enc.encode_text(qid, queries[qid], TextKind.QUERY, idx.granularity)
        return retrieval.search(idx, rep, cfg.k)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            ranked = list(pool.map(run_one, qids))
    else:
        ranked = [run_one(q) for q in qids]
    retrieval.write_run(_artifact(args, "run.trec"), ranked)
    print(f"run\t{_artifact(args, 'run.trec')}\tqueries\t{len(ranked)}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    run_path = args.run or _artifact(args, "run.trec")
    run = retrieval.read_run(run_path)
    judgments = corpus.ingest(args.qrels, "qrels")
    metrics = retrieval.evaluate(run, judgments)
    extra: list[tuple[str, float]] = []
    if args.with_space:
        idx = RepresentationIndex.load(_artifact(args, "index.tgix"))
        stats = idx.space_stats()
        gib = stats.total_gib
        extra.extend([
            ("space_payload_bytes", float(stats.payload_bytes)),
            ("space_metadata_bytes", float(stats.metadata_bytes)),
            ("space_total_bytes", float(stats.total_bytes)),
            ("space_embeddings", float(stats.embeddings_stored)),
            ("space_gib", gib),
            ("tradeoff_1e3_per_gib", retrieval.tradeoff(metrics.mrr_at_k, gib)),
        ])
    retrieval.write_metrics(_artifact(args, "metrics.tsv"), metrics, extra)
    for name, value in list(metrics.rows()) + extra:
        print(f"{name}\t{value:.6f}")
    return 0


def _cmd_space_report(args) -> int:
    path = args.index_path or _artifact(args, "index.tgix")
    idx = RepresentationIndex.load(path)
    stats = indexmod.space_report(idx)
    print(f"docs\t{stats.docs}")
    print(f"embeddings_stored\t{stats.embeddings_stored}")
    print(f"mean_entries\t{stats.mean_entries:.4f}")
    print(f"payload_bytes\t{stats.payload_bytes}")
    print(f"metadata_bytes\t{stats.metadata_bytes}")
    print(f"total_bytes\t{stats.total_bytes}")
    print(f"gib\t{stats.total_gib:.9f}")
    return 0


def _cmd_grad_check(args) -> int:
    cfg = _resolve_config(args)
    params, batch = make_audit_model(cfg.seed)
    worst, per_tensor = gradient_check(params, batch)
    for name, err in per_tensor.items():
        print(f"{name}\t{err:.3e}")
    print(f"max_relative_error\t{worst:.3e}")
    if worst > args.tolerance:
        print(f"gradient audit failed: {worst:.3e} > {args.tolerance:.1e}", file=sys.stderr)
        return 2
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "lda-train": _cmd_lda_train,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "index": _cmd_index,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "space-report": _cmd_space_report,
    "grad-check": _cmd_grad_check,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"topicgrain: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"topicgrain: {exc}", file=sys.stderr)
        return 1
    except TopicgrainError as exc:
        print(f"topicgrain: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))

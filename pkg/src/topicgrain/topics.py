"""Topic modeling: collapsed-Gibbs LDA, fold-in inference, and the word-topic recognizer.

The recognizer turns one text plus its topic proportions into a per-position
table of topic assignments: a topic is representative when its proportion
clears ``theta_t``; under each representative topic a word is kept when its
probability clears ``theta_wf`` or its rank ratio clears ``theta_wr``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._gibbs import fold_in_sweep, gibbs_sweep
from .corpus import SPECIAL_TOKENS, CorpusLimits, TextKind, TokenSeq, Vocab, tokenize
from .errors import EmptyCorpus, FormatError

_TGLD_MAGIC = b"TGLD"
_TGLD_VERSION = 1
_NUM_SPECIALS = len(SPECIAL_TOKENS)


@dataclass(frozen=True)
class LdaConfig:
    """Sampler hyperparameters; alpha and eta default to 1/k."""

    k: int = 8
    alpha: float | None = None
    eta: float | None = None
    train_iters: int = 200
    infer_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 1.0 / self.k)
        if self.eta is None:
            object.__setattr__(self, "eta", 1.0 / self.k)
        if self.alpha <= 0 or self.eta <= 0:
            raise ValueError("alpha and eta must be positive")


@dataclass(frozen=True)
class TopicExtractionConfig:
    """Thresholds for representative topics (theta_t) and words (theta_wf, theta_wr)."""

    theta_t: float = 0.15
    theta_wf: float = 0.005
    theta_wr: float = 0.2

    def __post_init__(self):
        for name in ("theta_wf", "theta_wr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        # theta_t may exceed 1 to express "no topic qualifies".
        if self.theta_t < 0.0:
            raise ValueError("theta_t must be >= 0")


@dataclass
class LdaModel:
    """Fitted model: row-stochastic topic-word and doc-topic matrices plus counts."""

    config: LdaConfig
    topic_word: np.ndarray  # (k, V) float64, rows sum to 1
    doc_topic: np.ndarray  # (D, k) float64, rows sum to 1
    n_kw: np.ndarray | None = None  # (k, V) final assignment counts
    n_k: np.ndarray | None = None  # (k,)
    doc_ids: list[str] | None = None

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def vocab_size(self) -> int:
        return self.topic_word.shape[1]


class TopicMixture(NamedTuple):
    proportions: np.ndarray
    degenerate: bool


@dataclass
class TopicAssignmentTable:
    """Per-position sorted topic lists for one text; specials/[UNK] stay empty."""

    topics_per_position: tuple[tuple[int, ...], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.topics_per_position)

    def __getitem__(self, position: int) -> tuple[int, ...]:
        return self.topics_per_position[position]

    @property
    def total_assignments(self) -> int:
        return sum(len(ts) for ts in self.topics_per_position)

    @property
    def topics_present(self) -> set[int]:
        out: set[int] = set()
        for ts in self.topics_per_position:
            out.update(ts)
        return out

    def is_empty(self) -> bool:
        return self.total_assignments == 0


def _content_word_ids(tokens) -> np.ndarray:
    """Indices of real words (specials and [UNK] are never sampled)."""
    return np.array([t for t in tokens if t >= _NUM_SPECIALS], dtype=np.int32)


def _stable_text_hash(text_id: str) -> int:
    digest = hashlib.blake2b(text_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def fit_lda(
    collection: dict[str, str],
    vocab: Vocab,
    cfg: LdaConfig,
    limits: CorpusLimits = CorpusLimits(),
) -> LdaModel:
    """Fit by collapsed Gibbs sampling; bitwise reproducible for a fixed seed.

    Documents are tokenized with the shared word-level tokenizer (document
    truncation applies) and only in-vocabulary words enter the sampler.
    Distributions are computed from the final counts with prior smoothing.
    """
    if not collection:
        raise EmptyCorpus("empty collection")
    doc_ids = list(collection)
    seqs = [
        tokenize(vocab, tid, collection[tid], TextKind.DOCUMENT, limits) for tid in doc_ids
    ]
    flat_docs: list[np.ndarray] = []
    flat_words: list[np.ndarray] = []
    for d, seq in enumerate(seqs):
        words = _content_word_ids(seq.tokens)
        flat_words.append(words)
        flat_docs.append(np.full(len(words), d, dtype=np.int32))
    word_ids = np.concatenate(flat_words) if flat_words else np.empty(0, np.int32)
    if word_ids.size == 0:
        raise EmptyCorpus("collection has no in-vocabulary words")
    doc_index = np.concatenate(flat_docs)

    n_docs, k, v = len(doc_ids), cfg.k, len(vocab)
    rng = np.random.default_rng(cfg.seed)
    z = rng.integers(0, k, word_ids.size).astype(np.int32)

    n_dk = np.zeros((n_docs, k), dtype=np.int64)
    n_kw = np.zeros((k, v), dtype=np.int64)
    np.add.at(n_dk, (doc_index, z), 1)
    np.add.at(n_kw, (z, word_ids), 1)
    n_k = n_kw.sum(axis=1)

    for _ in range(cfg.train_iters):
        gibbs_sweep(
            z, doc_index, word_ids, n_dk, n_kw, n_k,
            cfg.alpha, cfg.eta, float(v), rng.random(word_ids.size),
        )

    topic_word = (n_kw + cfg.eta) / (n_k + v * cfg.eta)[:, None]
    doc_len = n_dk.sum(axis=1, keepdims=True)
    doc_topic = (n_dk + cfg.alpha) / (doc_len + k * cfg.alpha)
    return LdaModel(cfg, topic_word, doc_topic, n_kw, n_k, doc_ids)


def infer_doc_topics(model: LdaModel, seq: TokenSeq) -> TopicMixture:
    """Fold-in inference for one text with topic-word rows held fixed.

    The sampler is seeded from (model seed, stable hash of the text id), so
    the result depends only on the model and the text, not on call order.
    A text with no in-vocabulary words gets the uniform mixture, flagged.
    """
    cfg = model.config
    words = _content_word_ids(seq.tokens)
    if words.size == 0:
        return TopicMixture(np.full(cfg.k, 1.0 / cfg.k), True)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, _stable_text_hash(seq.text_id)])
    )
    z = rng.integers(0, cfg.k, words.size).astype(np.int32)
    m_k = np.bincount(z, minlength=cfg.k).astype(np.int64)
    for _ in range(cfg.infer_iters):
        fold_in_sweep(z, words, m_k, model.topic_word, cfg.alpha, rng.random(words.size))
    proportions = (m_k + cfg.alpha) / (words.size + cfg.k * cfg.alpha)
    return TopicMixture(proportions, False)


def extract_word_topics(
    model: LdaModel,
    seq: TokenSeq,
    topic_dist: np.ndarray,
    cfg: TopicExtractionConfig,
) -> TopicAssignmentTable:
    """Assign representative topics to every word position of one text.

    For each topic t with topic_dist[t] >= theta_t, the topic-word row is
    restricted to the text's distinct in-vocabulary words (l of them); word w
    receives t when its probability is >= theta_wf or its 1-based descending
    rank (ties broken by ascending vocabulary index) satisfies
    rank/l <= theta_wr. Assignments repeat at every position where w occurs.
    """
    distinct = sorted({t for t in seq.tokens if t >= _NUM_SPECIALS})
    per_position: list[list[int]] = [[] for _ in seq.tokens]
    if distinct:
        words = np.array(distinct, dtype=np.int64)
        l = len(words)
        for t in range(model.k):
            if topic_dist[t] < cfg.theta_t:
                continue
            dis = model.topic_word[t, words]
            # Stable argsort of -dis ranks descending, ties by vocab index
            # because `words` is ascending.
            order = np.argsort(-dis, kind="stable")
            rank = np.empty(l, dtype=np.int64)
            rank[order] = np.arange(1, l + 1)
            selected = (dis >= cfg.theta_wf) | (rank / l <= cfg.theta_wr)
            chosen = {int(w) for w, keep in zip(words, selected) if keep}
            if not chosen:
                continue
            for pos, tok in enumerate(seq.tokens):
                if tok in chosen:
                    per_position[pos].append(t)
    return TopicAssignmentTable(tuple(tuple(ts) for ts in per_position))


def save_lda(model: LdaModel, path) -> None:
    """Persist as TGLD: header ints/floats then float64 matrices, little-endian."""
    cfg = model.config
    d = model.doc_topic.shape[0]
    with open(path, "wb") as fh:
        fh.write(_TGLD_MAGIC)
        fh.write(struct.pack("<IIIddQQII",
                             _TGLD_VERSION, cfg.k, model.vocab_size,
                             cfg.alpha, cfg.eta, cfg.seed,
                             d, cfg.train_iters, cfg.infer_iters))
        fh.write(np.ascontiguousarray(model.topic_word, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.doc_topic, dtype="<f8").tobytes())


def load_lda(path) -> LdaModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TGLD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(struct.calcsize("<IIIddQQII"))
        version, k, v, alpha, eta, seed, d, train_iters, infer_iters = struct.unpack(
            "<IIIddQQII", header
        )
        if version != _TGLD_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        topic_word = np.frombuffer(fh.read(8 * k * v), dtype="<f8").reshape(k, v).copy()
        doc_topic = np.frombuffer(fh.read(8 * d * k), dtype="<f8").reshape(d, k).copy()
        if topic_word.size != k * v or doc_topic.size != d * k:
            raise FormatError(f"{path}: truncated matrix block")
    cfg = LdaConfig(k=k, alpha=alpha, eta=eta, train_iters=train_iters,
                    infer_iters=infer_iters, seed=seed)
    return LdaModel(cfg, topic_word, doc_topic)

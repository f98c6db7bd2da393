"""Topic-grained text encoding.

A text becomes a sequence of (topic, embedding) entries in three stages:
contextual word embeddings from a single self-attention + tanh feed-forward
block (residual around each sublayer), bucketing of word embeddings by their
assigned topics, then per-topic attention pooling followed by a linear
projection and L2 normalization. Word- and global-granularity modes reuse the
same contextual stage but pool differently (per word / uniform mean).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import CorpusLimits, TextKind, TokenSeq, Vocab, tokenize
from .errors import EmptyBucket, FormatError
from .topics import (
    LdaModel,
    TopicAssignmentTable,
    TopicExtractionConfig,
    extract_word_topics,
    infer_doc_topics,
)

_TGEN_MAGIC = b"TGEN"
_TGEN_VERSION = 1

#: Storage and gradient order of the trainable tensors.
TENSOR_FIELDS = (
    "tok_emb", "pos_emb", "wq", "wk", "wv", "wo", "wf",
    "attn_w", "attn_b", "topic_q", "proj",
)

#: Number of leading prefix tokens ([CLS] plus the [Q]/[D] marker).
PREFIX_LEN = 2


class Granularity(Enum):
    TOPIC = "topic"
    WORD = "word"
    GLOBAL = "global"


@dataclass
class EncoderParams:
    """All trainable tensors, kept in float64 while in memory.

    tok_emb (V, d_c), pos_emb (L_max, d_c); wq/wk/wv/wo are the self-attention
    maps and wf the tanh feed-forward map, all (d_c, d_c) applied on the right
    of row vectors; attn_w (d_a, d_c) and attn_b (d_a,) are shared across
    buckets; topic_q (K, d_a) holds one attention query per topic; proj
    (dim, d_c) is the output projection (no bias, no activation).
    """

    tok_emb: np.ndarray
    pos_emb: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    wf: np.ndarray
    attn_w: np.ndarray
    attn_b: np.ndarray
    topic_q: np.ndarray
    proj: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.shape[0]

    @property
    def max_len(self) -> int:
        return self.pos_emb.shape[0]

    @property
    def d_c(self) -> int:
        return self.tok_emb.shape[1]

    @property
    def d_a(self) -> int:
        return self.attn_w.shape[0]

    @property
    def num_topics(self) -> int:
        return self.topic_q.shape[0]

    @property
    def dim(self) -> int:
        return self.proj.shape[0]

    def tensors(self):
        for name in TENSOR_FIELDS:
            yield name, getattr(self, name)

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: t.copy() for name, t in self.tensors()})


def init_encoder_params(
    vocab_size: int,
    max_len: int,
    num_topics: int,
    d_c: int = 64,
    d_a: int = 64,
    dim: int = 256,
    seed: int = 0,
) -> EncoderParams:
    """Seeded initialization: uniform(-0.05, 0.05) for embeddings and topic
    queries, Xavier-scaled uniform for the linear maps, zero bias."""
    rng = np.random.default_rng(seed)

    def emb(shape):
        return rng.uniform(-0.05, 0.05, shape)

    def xavier(shape):
        fan_out, fan_in = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, shape)

    return EncoderParams(
        tok_emb=emb((vocab_size, d_c)),
        pos_emb=emb((max_len, d_c)),
        wq=xavier((d_c, d_c)),
        wk=xavier((d_c, d_c)),
        wv=xavier((d_c, d_c)),
        wo=xavier((d_c, d_c)),
        wf=xavier((d_c, d_c)),
        attn_w=xavier((d_a, d_c)),
        attn_b=np.zeros(d_a),
        topic_q=emb((num_topics, d_a)),
        proj=xavier((dim, d_c)),
    )


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def contextual_forward(params: EncoderParams, token_ids) -> dict:
    """Full contextual stage with every intermediate cached for backprop."""
    ids = np.asarray(token_ids, dtype=np.int64)
    x = params.tok_emb[ids] + params.pos_emb[: len(ids)]
    qm = x @ params.wq
    km = x @ params.wk
    vm = x @ params.wv
    scale = 1.0 / np.sqrt(params.d_c)
    attn = _softmax_rows((qm @ km.T) * scale)
    mixed = attn @ vm
    h = x + mixed @ params.wo
    th = np.tanh(h @ params.wf)
    c = h + th
    return {"ids": ids, "x": x, "qm": qm, "km": km, "vm": vm,
            "attn": attn, "mixed": mixed, "h": h, "th": th, "c": c,
            "scale": scale}


def encode_contextual(params: EncoderParams, seq: TokenSeq) -> np.ndarray:
    """One contextual embedding per token position, specials included."""
    n = len(seq.tokens)
    if n < 1 or n > params.max_len:
        raise ValueError(f"sequence length {n} outside [1, {params.max_len}]")
    if max(seq.tokens) >= params.vocab_size:
        raise ValueError("token index outside vocabulary")
    return contextual_forward(params, seq.tokens)["c"]


def bucket_positions(table: TopicAssignmentTable) -> dict[int, tuple[int, ...]]:
    """topic -> ascending positions of every word assigned to it."""
    buckets: dict[int, list[int]] = {}
    for pos, topics in enumerate(table.topics_per_position):
        for t in topics:
            buckets.setdefault(t, []).append(pos)
    return {t: tuple(ps) for t, ps in sorted(buckets.items())}


def bucket_by_topic(c: np.ndarray, table: TopicAssignmentTable) -> dict[int, np.ndarray]:
    """Gather contextual embeddings into per-topic buckets.

    A position with several topics contributes its embedding to each of those
    buckets; positions with no topics contribute nowhere. May be empty.
    """
    if len(table) != len(c):
        raise ValueError("table and embeddings disagree on positions")
    return {t: c[list(ps)] for t, ps in bucket_positions(table).items()}


def _pool_attention(params: EncoderParams, bucket: np.ndarray, topic: int) -> dict:
    z = np.tanh(bucket @ params.attn_w.T + params.attn_b)
    logits = z @ params.topic_q[topic]
    weights = _softmax_rows(logits)
    return {"z": z, "weights": weights, "pooled": weights @ bucket}


def attention_pool(params: EncoderParams, bucket: np.ndarray, topic: int) -> np.ndarray:
    """Weighted sum of a bucket under its topic's attention query."""
    bucket = np.atleast_2d(np.asarray(bucket, dtype=np.float64))
    if bucket.shape[0] == 0:
        raise EmptyBucket("attention pooling over an empty bucket")
    if not 0 <= topic < params.num_topics:
        raise ValueError(f"topic {topic} outside [0, {params.num_topics})")
    return _pool_attention(params, bucket, topic)["pooled"]


def project(params: EncoderParams, v: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Linear projection to the output dimension, then unit normalization.

    A zero vector stays zero (the degenerate case normalization cannot fix).
    """
    p = params.proj @ np.asarray(v, dtype=np.float64)
    if not normalize:
        return p
    r = np.linalg.norm(p)
    return p / r if r > 0.0 else p


@dataclass(frozen=True)
class PoolStep:
    """One output entry: which positions pool into it and how."""

    topic: int | None
    positions: tuple[int, ...]
    attention: bool


def pooling_plan(
    seq: TokenSeq,
    table: TopicAssignmentTable | None,
    granularity: Granularity,
) -> tuple[list[PoolStep], bool]:
    """Entry layout for one text; returns (steps, fell_back_to_global)."""
    content = tuple(range(PREFIX_LEN, len(seq.tokens)))
    if granularity is Granularity.WORD:
        return [PoolStep(None, (p,), False) for p in content], False
    if granularity is Granularity.GLOBAL:
        return [PoolStep(None, content, False)], False
    if table is None:
        raise ValueError("topic granularity requires a topic assignment table")
    buckets = bucket_positions(table)
    if not buckets:
        return [PoolStep(None, content, False)], True
    return [PoolStep(t, ps, True) for t, ps in buckets.items()], False


def text_forward(
    params: EncoderParams,
    token_ids,
    plan: list[PoolStep],
    normalize: bool = True,
) -> tuple[np.ndarray, dict]:
    """Run the whole pipeline for one text; cache everything for backprop."""
    ctx = contextual_forward(params, token_ids)
    c = ctx["c"]
    entries = np.empty((len(plan), params.dim))
    steps = []
    for i, step in enumerate(plan):
        sub = c[list(step.positions)]
        if step.attention:
            pool = _pool_attention(params, sub, step.topic)
        else:
            b = sub.shape[0]
            pool = {"z": None, "weights": np.full(b, 1.0 / b), "pooled": sub.mean(axis=0)}
        p = params.proj @ pool["pooled"]
        r = float(np.linalg.norm(p))
        if normalize and r > 0.0:
            e = p / r
        else:
            e = p
        entries[i] = e
        steps.append({**pool, "sub": sub, "p": p, "r": r, "e": e})
    return entries, {"ctx": ctx, "steps": steps, "plan": plan, "normalize": normalize}


@dataclass
class Representation:
    """A text's entries: (topic or None, unit vector) pairs, float32."""

    text_id: str
    granularity: Granularity
    topic_ids: tuple[int | None, ...]
    vectors: np.ndarray
    degenerate: bool = False

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class Encoder:
    """Bundles everything needed to turn raw text into a Representation.

    Immutable during encoding; safe to call concurrently across texts. The
    topic model is only consulted for topic granularity.
    """

    def __init__(
        self,
        params: EncoderParams,
        vocab: Vocab,
        lda: LdaModel | None = None,
        extraction: TopicExtractionConfig | None = None,
        limits: CorpusLimits = CorpusLimits(),
        normalize: bool = True,
    ):
        self.params = params
        self.vocab = vocab
        self.lda = lda
        self.extraction = extraction or TopicExtractionConfig()
        self.limits = limits
        self.normalize = normalize

    def table_for(self, seq: TokenSeq) -> TopicAssignmentTable:
        if self.lda is None:
            raise ValueError("no topic model attached")
        mixture = infer_doc_topics(self.lda, seq)
        return extract_word_topics(self.lda, seq, mixture.proportions, self.extraction)

    def plan_for(
        self, seq: TokenSeq, granularity: Granularity
    ) -> tuple[list[PoolStep], bool]:
        table = self.table_for(seq) if granularity is Granularity.TOPIC else None
        return pooling_plan(seq, table, granularity)

    def encode_tokens(
        self, seq: TokenSeq, granularity: Granularity
    ) -> Representation:
        plan, fell_back = self.plan_for(seq, granularity)
        entries, _ = text_forward(self.params, seq.tokens, plan, self.normalize)
        vectors = entries.astype(np.float32)
        degenerate = fell_back or bool(np.any(~vectors.any(axis=1)))
        return Representation(
            seq.text_id,
            granularity,
            tuple(s.topic for s in plan),
            vectors,
            degenerate,
        )

    def encode_text(
        self, text_id: str, raw_text: str, kind: TextKind, granularity: Granularity
    ) -> Representation:
        seq = tokenize(self.vocab, text_id, raw_text, kind, self.limits)
        return self.encode_tokens(seq, granularity)


def params_to_bytes(params: EncoderParams) -> bytes:
    """TGEN block: dims header then float32 tensors in TENSOR_FIELDS order."""
    parts = [_TGEN_MAGIC]
    parts.append(struct.pack(
        "<IIIIIII", _TGEN_VERSION, params.d_c, params.d_a, params.dim,
        params.num_topics, params.vocab_size, params.max_len,
    ))
    for _, tensor in params.tensors():
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def save_params(params: EncoderParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def params_from_bytes(blob: bytes) -> EncoderParams:
    if blob[:4] != _TGEN_MAGIC:
        raise FormatError(f"bad parameter block magic {blob[:4]!r}")
    header_size = struct.calcsize("<IIIIIII")
    version, d_c, d_a, dim, k, v, max_len = struct.unpack(
        "<IIIIIII", blob[4 : 4 + header_size]
    )
    if version != _TGEN_VERSION:
        raise FormatError(f"unsupported parameter block version {version}")
    shapes = {
        "tok_emb": (v, d_c), "pos_emb": (max_len, d_c),
        "wq": (d_c, d_c), "wk": (d_c, d_c), "wv": (d_c, d_c),
        "wo": (d_c, d_c), "wf": (d_c, d_c),
        "attn_w": (d_a, d_c), "attn_b": (d_a,),
        "topic_q": (k, d_a), "proj": (dim, d_c),
    }
    offset = 4 + header_size
    tensors = {}
    for name in TENSOR_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        raw = blob[offset : offset + 4 * count]
        if len(raw) != 4 * count:
            raise FormatError("truncated parameter block")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        offset += 4 * count
    return EncoderParams(**tensors)


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())

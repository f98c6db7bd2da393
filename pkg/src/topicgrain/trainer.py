"""Contrastive training of the encoder with exact analytic gradients.

The objective for one example with a positive document and m negatives is
-log(exp(s_pos) / (exp(s_pos) + sum_i exp(s_neg_i))) over MaxSim scores.
Gradients are hand-derived through the whole pipeline: normalization,
projection, (attention or mean) pooling, the contextual block, and the
MaxSim max-selection, where the subgradient flows only through the argmax
document entry per query entry, ties broken toward the lowest index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusLimits, TextKind, TokenSeq, TrainingSet, Vocab, tokenize
from .encoder import (
    Encoder,
    EncoderParams,
    Granularity,
    PoolStep,
    init_encoder_params,
    params_from_bytes,
    params_to_bytes,
    pooling_plan,
    text_forward,
)
from .errors import FormatError, NumericalError
from .topics import LdaModel, TopicAssignmentTable, TopicExtractionConfig

_TGCK_MAGIC = b"TGCK"
_TGCK_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    m: int = 2
    batch_size: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    normalize: bool = True
    granularity: Granularity = Granularity.TOPIC

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TextInput:
    """A text ready for the forward pass: token ids plus its pooling plan."""

    tokens: tuple[int, ...]
    plan: tuple[PoolStep, ...]


@dataclass(frozen=True)
class TrainExample:
    """One triple group: query, positive document, m negative documents."""

    query: TextInput
    docs: tuple[TextInput, ...]  # docs[0] is the positive


def loss(scores) -> float:
    """Negative log probability of the positive under a softmax over scores.

    Computed with a max shift, so it is finite for any finite inputs and
    invariant to adding a constant to every score.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("scores must hold one positive and at least one negative")
    m = s.max()
    return float(m + np.log(np.exp(s - m).sum()) - s[0])


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


def _score_pair(eq: np.ndarray, ed: np.ndarray) -> tuple[float, list[int]]:
    """MaxSim score plus, per query entry, the index of its argmax doc entry."""
    total = 0.0
    argmax: list[int] = []
    for i in range(eq.shape[0]):
        best = -np.inf
        best_j = 0
        for j in range(ed.shape[0]):
            s = float(np.dot(eq[i], ed[j]))
            if s > best:
                best = s
                best_j = j
        total += best
        argmax.append(best_j)
    return total, argmax


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(t) for name, t in params.tensors()}


def _text_backward(
    params: EncoderParams, cache: dict, d_entries: np.ndarray, grads: dict
) -> None:
    """Accumulate d(loss)/d(tensor) for one text given entry gradients."""
    ctx = cache["ctx"]
    c = ctx["c"]
    dc = np.zeros_like(c)

    for i, step in enumerate(cache["plan"]):
        st = cache["steps"][i]
        g_e = d_entries[i]
        # unit normalization: e = p / r
        if cache["normalize"] and st["r"] > 0.0:
            e = st["e"]
            g_p = (g_e - (g_e @ e) * e) / st["r"]
        else:
            g_p = g_e
        # p = proj @ pooled
        grads["proj"] += np.outer(g_p, st["pooled"])
        g_pooled = params.proj.T @ g_p
        # pooled = weights @ sub
        w = st["weights"]
        sub = st["sub"]
        g_sub = np.outer(w, g_pooled)
        if step.attention:
            g_w = sub @ g_pooled
            g_logits = w * (g_w - g_w @ w)
            z = st["z"]
            grads["topic_q"][step.topic] += z.T @ g_logits
            g_pre = np.outer(g_logits, params.topic_q[step.topic]) * (1.0 - z * z)
            grads["attn_w"] += g_pre.T @ sub
            grads["attn_b"] += g_pre.sum(axis=0)
            g_sub = g_sub + g_pre @ params.attn_w
        dc[list(step.positions)] += g_sub

    # c = h + tanh(h @ wf)
    h, th = ctx["h"], ctx["th"]
    g_pre_f = dc * (1.0 - th * th)
    grads["wf"] += h.T @ g_pre_f
    g_h = dc + g_pre_f @ params.wf.T
    # h = x + (attn @ vm) @ wo
    grads["wo"] += ctx["mixed"].T @ g_h
    g_mixed = g_h @ params.wo.T
    g_x = g_h.copy()
    # mixed = attn @ vm
    attn, vm = ctx["attn"], ctx["vm"]
    g_attn = g_mixed @ vm.T
    g_vm = attn.T @ g_mixed
    # attn = softmax_rows(qm @ km.T * scale)
    row_dot = (g_attn * attn).sum(axis=1, keepdims=True)
    g_s = attn * (g_attn - row_dot)
    qm, km, scale = ctx["qm"], ctx["km"], ctx["scale"]
    g_qm = (g_s @ km) * scale
    g_km = (g_s.T @ qm) * scale
    x = ctx["x"]
    grads["wq"] += x.T @ g_qm
    grads["wk"] += x.T @ g_km
    grads["wv"] += x.T @ g_vm
    g_x += g_qm @ params.wq.T + g_km @ params.wk.T + g_vm @ params.wv.T
    # x = tok_emb[ids] + pos_emb[:n]
    np.add.at(grads["tok_emb"], ctx["ids"], g_x)
    grads["pos_emb"][: g_x.shape[0]] += g_x


def _example_scores(params: EncoderParams, example: TrainExample, normalize: bool):
    q_entries, q_cache = text_forward(params, example.query.tokens, list(example.query.plan), normalize)
    doc_results = [
        text_forward(params, d.tokens, list(d.plan), normalize) for d in example.docs
    ]
    scores = np.empty(len(example.docs))
    argmaxes = []
    for j, (d_entries, _) in enumerate(doc_results):
        scores[j], arg = _score_pair(q_entries, d_entries)
        argmaxes.append(arg)
    return q_entries, q_cache, doc_results, scores, argmaxes


def batch_loss(params: EncoderParams, batch, normalize: bool = True) -> float:
    """Mean loss of a batch, forward only."""
    total = 0.0
    for example in batch:
        scores = _example_scores(params, example, normalize)[3]
        total += loss(scores)
    return total / len(batch)


def backward(
    params: EncoderParams, batch, normalize: bool = True
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient for every trainable tensor."""
    grads = zero_grads(params)
    scale = 1.0 / len(batch)
    total = 0.0
    for example in batch:
        q_entries, q_cache, doc_results, scores, argmaxes = _example_scores(
            params, example, normalize
        )
        total += loss(scores)
        d_scores = _softmax(scores)
        d_scores[0] -= 1.0
        d_scores *= scale
        d_q_entries = np.zeros_like(q_entries)
        for j, (d_entries, d_cache) in enumerate(doc_results):
            ds = d_scores[j]
            d_doc_entries = np.zeros_like(d_entries)
            for i, best_j in enumerate(argmaxes[j]):
                d_q_entries[i] += ds * d_entries[best_j]
                d_doc_entries[best_j] += ds * q_entries[i]
            _text_backward(params, d_cache, d_doc_entries, grads)
        _text_backward(params, q_cache, d_q_entries, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(name)
    return total * scale, grads


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: EncoderParams, grads: dict) -> None:
        for name, t in params.tensors():
            t -= self.lr * grads[name]


class _Adam:
    def __init__(self, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] | None = None
        self.v: dict[str, np.ndarray] | None = None

    def step(self, params: EncoderParams, grads: dict) -> None:
        if self.m is None:
            self.m = {n: np.zeros_like(g) for n, g in grads.items()}
            self.v = {n: np.zeros_like(g) for n, g in grads.items()}
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, t in params.tensors():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            t -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Checkpoint:
    params: EncoderParams
    epoch: int
    mean_loss: float
    fingerprint: bytes = bytes(32)
    aborted: bool = False
    history: list[float] = field(default_factory=list)


def save_checkpoint(ck: Checkpoint, path) -> None:
    """TGCK: magic, version, fingerprint, epoch, mean loss, then the TGEN block."""
    if len(ck.fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    with open(path, "wb") as fh:
        fh.write(_TGCK_MAGIC)
        fh.write(struct.pack("<I", _TGCK_VERSION))
        fh.write(ck.fingerprint)
        fh.write(struct.pack("<Id", ck.epoch, ck.mean_loss))
        fh.write(params_to_bytes(ck.params))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _TGCK_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _TGCK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    fingerprint = blob[8:40]
    epoch, mean_loss = struct.unpack("<Id", blob[40:52])
    params = params_from_bytes(blob[52:])
    return Checkpoint(params, epoch, mean_loss, fingerprint)


def prepare_examples(
    cfg: TrainConfig,
    training_set: TrainingSet,
    collection: dict[str, str],
    queries: dict[str, str],
    lda: LdaModel,
    vocab: Vocab,
    extraction: TopicExtractionConfig | None = None,
    limits: CorpusLimits = CorpusLimits(),
) -> list[TrainExample]:
    """Tokenize and plan every text referenced by the triples, once.

    Topic assignments are frozen here: the topic model never receives
    gradients, so plans can be computed up front and reused every epoch.
    """
    helper = Encoder(None, vocab, lda, extraction, limits, cfg.normalize)

    plan_cache: dict[tuple[str, bool], TextInput] = {}

    def prep(text_id: str, raw: str, kind: TextKind) -> TextInput:
        key = (text_id, kind is TextKind.QUERY)
        if key not in plan_cache:
            seq = tokenize(vocab, text_id, raw, kind, limits)
            plan, _ = helper.plan_for(seq, cfg.granularity)
            plan_cache[key] = TextInput(seq.tokens, tuple(plan))
        return plan_cache[key]

    examples = []
    for triple in training_set:
        if len(triple.negatives) != cfg.m:
            raise ValueError(
                f"triple for {triple.query_id!r} has {len(triple.negatives)} negatives, config says {cfg.m}"
            )
        query = prep(triple.query_id, queries[triple.query_id], TextKind.QUERY)
        docs = [prep(triple.positive, collection[triple.positive], TextKind.DOCUMENT)]
        for neg in triple.negatives:
            docs.append(prep(neg, collection[neg], TextKind.DOCUMENT))
        examples.append(TrainExample(query, tuple(docs)))
    return examples


def train(
    cfg: TrainConfig,
    training_set: TrainingSet,
    collection: dict[str, str],
    queries: dict[str, str],
    lda: LdaModel,
    vocab: Vocab,
    extraction: TopicExtractionConfig | None = None,
    limits: CorpusLimits = CorpusLimits(),
    d_c: int = 64,
    d_a: int = 64,
    dim: int = 256,
    fingerprint: bytes = bytes(32),
    initial: EncoderParams | None = None,
    on_epoch=None,
) -> Checkpoint:
    """Optimize encoder parameters over the triples; deterministic per seed.

    The shuffle order of each epoch is derived from (seed, epoch). If the
    loss turns non-finite the run aborts and the checkpoint of the last
    completed epoch is returned with the aborted flag set.
    """
    examples = prepare_examples(
        cfg, training_set, collection, queries, lda, vocab, extraction, limits
    )
    if not examples:
        raise ValueError("training set is empty")
    max_len = max(limits.max_query_len, limits.max_doc_len)
    params = initial.copy() if initial is not None else init_encoder_params(
        len(vocab), max_len, lda.k, d_c, d_a, dim, cfg.seed
    )
    if cfg.optimizer == "adam":
        opt = _Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    else:
        opt = _Sgd(cfg.learning_rate)

    history: list[float] = []
    last_good = params.copy()
    last_loss = float("nan")
    aborted = False
    epochs_done = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        diverged = False
        for start in range(0, len(order), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            try:
                mean_loss, grads = backward(params, batch, cfg.normalize)
            except NumericalError:
                diverged = True
                break
            if not np.isfinite(mean_loss):
                diverged = True
                break
            opt.step(params, grads)
            epoch_loss += mean_loss * len(batch)
        if diverged:
            params = last_good
            aborted = True
            break
        last_loss = epoch_loss / len(examples)
        history.append(last_loss)
        epochs_done = epoch + 1
        last_good = params.copy()
        if on_epoch is not None:
            on_epoch(epoch + 1, last_loss)
    return Checkpoint(params, epochs_done, last_loss, fingerprint, aborted, history)


def gradient_check(
    params: EncoderParams,
    batch,
    normalize: bool = True,
    h: float = 1e-4,
    floor: float = 1e-3,
) -> tuple[float, dict[str, float]]:
    """Max relative error of analytic gradients vs central finite differences.

    The denominator is max(|analytic|, |numeric|, floor): pure relative error
    for coordinates of meaningful magnitude, an absolute floor below that so
    finite-difference roundoff near true zeros does not dominate.
    """
    _, grads = backward(params, batch, normalize)
    worst = 0.0
    per_tensor: dict[str, float] = {}
    for name, tensor in params.tensors():
        analytic = grads[name]
        numeric = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = batch_loss(params, batch, normalize)
            flat[i] = orig - h
            down = batch_loss(params, batch, normalize)
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = float((np.abs(analytic - numeric) / denom).max()) if flat.size else 0.0
        per_tensor[name] = err
        worst = max(worst, err)
    return worst, per_tensor


def _min_argmax_gap(params: EncoderParams, batch, normalize: bool) -> float:
    """Smallest margin between best and runner-up doc entry over all MaxSim terms.

    Bitwise-equal scores are collapsed first: duplicate entries arise
    structurally (e.g. two topics sharing a singleton bucket pool to the same
    vector) and tie-breaking between identical functions is differentiable.
    """
    gap = np.inf
    for example in batch:
        q_entries, _, doc_results, _, _ = _example_scores(params, example, normalize)
        for d_entries, _ in doc_results:
            for i in range(q_entries.shape[0]):
                sims = np.unique(d_entries @ q_entries[i])
                if sims.size >= 2:
                    gap = min(gap, float(sims[-1] - sims[-2]))
    return gap


def make_audit_model(seed: int = 0):
    """Tiny model plus a random batch for the gradient audit.

    Vocabulary of 20, all widths 4, three topics; two examples with two
    negatives each, random multi-topic assignment tables. Batches whose
    MaxSim argmax margins fall under 1e-2 are redrawn: at a near-tie the
    loss is kinked and central differences measure the kink, not the
    subgradient, so such fixtures cannot audit anything.
    """
    v, d_c, d_a, dim, k, max_len = 20, 4, 4, 4, 3, 12
    # Wider-than-init random weights: at the training initialization scale
    # every pooled direction nearly coincides after normalization, which
    # parks all MaxSim terms at near-ties and starves the audit of margin.
    prng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    shapes = {
        "tok_emb": (v, d_c), "pos_emb": (max_len, d_c),
        "wq": (d_c, d_c), "wk": (d_c, d_c), "wv": (d_c, d_c),
        "wo": (d_c, d_c), "wf": (d_c, d_c), "attn_w": (d_a, d_c),
        "attn_b": (d_a,), "topic_q": (k, d_a), "proj": (dim, d_c),
    }
    params = EncoderParams(
        **{name: prng.normal(0.0, 0.5, shapes[name]) for name in shapes}
    )

    for attempt in range(1000):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))

        def random_text(length: int) -> TextInput:
            tokens = (1, 3) + tuple(int(t) for t in rng.integers(5, v, length))
            rows = [()] * 2
            for _ in range(length):
                n_topics = int(rng.integers(0, k + 1))
                rows.append(tuple(sorted(rng.choice(k, size=n_topics, replace=False).tolist())))
            table = TopicAssignmentTable(tuple(rows))
            seq = TokenSeq("audit", tokens, TextKind.DOCUMENT)
            plan, _ = pooling_plan(seq, table, Granularity.TOPIC)
            return TextInput(tokens, tuple(plan))

        examples = []
        for _ in range(2):
            query = random_text(int(rng.integers(3, 6)))
            docs = tuple(random_text(int(rng.integers(4, 8))) for _ in range(3))
            examples.append(TrainExample(query, docs))
        if _min_argmax_gap(params, examples, True) >= 1e-2:
            return params, examples
    raise RuntimeError("could not draw an audit batch away from argmax ties")

"""Collections, queries, judgments, training triples, and the word-level vocabulary.

File formats (all UTF-8, one record per line):
  collection / queries   ``<id>\\t<text>``
  qrels                  ``<qid> 0 <docid> <rel>`` (space separated, TREC style)
  triples                ``<qid>\\t<pos_docid>\\t<neg_docid_1>\\t...<neg_docid_m>``
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import DuplicateId, EmptyCorpus, EmptyText, ParseError

PAD, CLS, Q_MARK, D_MARK, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[Q]", "[D]", "[UNK]")

# Maximal runs of letters/digits; underscores, punctuation and whitespace split.
_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class TextKind(Enum):
    QUERY = "query"
    DOCUMENT = "document"


@dataclass(frozen=True)
class CorpusLimits:
    """Truncation lengths, prefix tokens included."""

    max_query_len: int = 32
    max_doc_len: int = 180

    def cap(self, kind: TextKind) -> int:
        return self.max_query_len if kind is TextKind.QUERY else self.max_doc_len


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; may return []."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSeq:
    text_id: str
    tokens: tuple[int, ...]
    kind: TextKind


class Vocab:
    """Bijective token<->index mapping with frequency bookkeeping.

    Indices 0..4 are the specials in SPECIAL_TOKENS order; real words follow
    sorted by descending corpus frequency, ties broken lexicographically.
    """

    def __init__(self, words, corpus_freq, doc_freq):
        self.index_to_token = list(SPECIAL_TOKENS) + list(words)
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        self.corpus_freq = dict(corpus_freq)
        self.doc_freq = dict(doc_freq)
        if len(self.token_to_index) != len(self.index_to_token):
            raise DuplicateId("vocabulary contains a repeated token")

    def __len__(self) -> int:
        return len(self.index_to_token)

    @property
    def num_specials(self) -> int:
        return len(SPECIAL_TOKENS)

    def is_special(self, index: int) -> bool:
        return index < len(SPECIAL_TOKENS)

    def index_of(self, token: str) -> int:
        return self.token_to_index.get(token, UNK)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.index_to_token):
                cf = self.corpus_freq.get(tok, 0)
                df = self.doc_freq.get(tok, 0)
                fh.write(f"{i}\t{tok}\t{cf}\t{df}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        words, cf, df = [], {}, {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ParseError(path, line_no, "expected 4 tab-separated fields")
                idx, tok = int(parts[0]), parts[1]
                if idx < len(SPECIAL_TOKENS):
                    if tok != SPECIAL_TOKENS[idx]:
                        raise ParseError(path, line_no, f"special slot {idx} holds {tok!r}")
                    continue
                words.append(tok)
                cf[tok] = int(parts[2])
                df[tok] = int(parts[3])
        return cls(words, cf, df)


def build_vocab(texts, min_count: int = 1) -> Vocab:
    """Build the vocabulary over an iterable of raw texts.

    Keeps every word whose total corpus frequency is >= min_count. Two runs
    over the same corpus produce identical mappings.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    corpus_freq: dict[str, int] = {}
    doc_freq: dict[str, int] = {}
    saw_text = False
    for text in texts:
        saw_text = True
        words = split_words(text)
        for w in words:
            corpus_freq[w] = corpus_freq.get(w, 0) + 1
        for w in set(words):
            doc_freq[w] = doc_freq.get(w, 0) + 1
    if not saw_text:
        raise EmptyCorpus("no texts in corpus")
    kept = sorted(
        (w for w, c in corpus_freq.items() if c >= min_count),
        key=lambda w: (-corpus_freq[w], w),
    )
    return Vocab(
        kept,
        {w: corpus_freq[w] for w in kept},
        {w: doc_freq[w] for w in kept},
    )


def tokenize(
    vocab: Vocab,
    text_id: str,
    raw_text: str,
    kind: TextKind,
    limits: CorpusLimits = CorpusLimits(),
) -> TokenSeq:
    """Lowercase, split, map OOV words to [UNK], prefix, truncate.

    Queries start [CLS],[Q]; documents start [CLS],[D]. Truncation keeps the
    head of the text and counts the two prefix tokens against the cap.
    """
    words = split_words(raw_text)
    if not words:
        raise EmptyText(f"{text_id!r}: no tokens after normalization")
    marker = Q_MARK if kind is TextKind.QUERY else D_MARK
    cap = limits.cap(kind)
    body = [vocab.index_of(w) for w in words[: max(0, cap - 2)]]
    return TokenSeq(text_id, (CLS, marker) + tuple(body), kind)


def detokenize(vocab: Vocab, seq: TokenSeq) -> str:
    """The word content of a sequence; specials are dropped, [UNK] survives as its literal."""
    return " ".join(
        vocab.index_to_token[i] for i in seq.tokens if not vocab.is_special(i) or i == UNK
    )


@dataclass(frozen=True)
class Triple:
    query_id: str
    positive: str
    negatives: tuple[str, ...]


@dataclass
class TrainingSet:
    triples: list[Triple] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.triples[0].negatives) if self.triples else 0

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)


class Judgments:
    """query_id -> set of relevant doc ids (graded relevance >= 1)."""

    def __init__(self):
        self.relevant: dict[str, set[str]] = {}

    def add(self, qid: str, docid: str, grade: int) -> None:
        if grade >= 1:
            self.relevant.setdefault(qid, set()).add(docid)

    def __contains__(self, qid: str) -> bool:
        return qid in self.relevant

    def __getitem__(self, qid: str) -> set[str]:
        return self.relevant[qid]

    def __len__(self) -> int:
        return len(self.relevant)


def _read_tsv_map(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError(path, line_no, "expected <id>\\t<text>")
            tid, text = parts
            if not tid:
                raise ParseError(path, line_no, "empty id")
            if tid in out:
                raise DuplicateId(f"{path}:{line_no}: duplicate id {tid!r}")
            out[tid] = text
    return out


def _read_qrels(path) -> Judgments:
    judgments = Judgments()
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(path, line_no, "expected <qid> 0 <docid> <rel>")
            qid, _, docid, rel = parts
            if not qid:
                raise ParseError(path, line_no, "empty query id")
            if (qid, docid) in seen:
                raise ParseError(path, line_no, f"duplicate pair ({qid}, {docid})")
            seen.add((qid, docid))
            try:
                grade = int(rel)
            except ValueError:
                raise ParseError(path, line_no, f"relevance grade {rel!r} is not an integer")
            judgments.add(qid, docid, grade)
    return judgments


def _read_triples(path) -> TrainingSet:
    ts = TrainingSet()
    m = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise ParseError(path, line_no, "expected <qid>\\t<pos>\\t<neg>...")
            qid, pos, negs = parts[0], parts[1], tuple(parts[2:])
            if m is None:
                m = len(negs)
            elif len(negs) != m:
                raise ParseError(path, line_no, f"expected {m} negatives, found {len(negs)}")
            if pos in negs:
                raise ParseError(path, line_no, f"positive {pos!r} repeated among negatives")
            ts.triples.append(Triple(qid, pos, negs))
    return ts


_READERS = {
    "collection": _read_tsv_map,
    "queries": _read_tsv_map,
    "qrels": _read_qrels,
    "triples": _read_triples,
}


def ingest(path, kind: str):
    """Load one of the four container kinds from disk."""
    try:
        reader = _READERS[kind]
    except KeyError:
        raise ValueError(f"unknown container kind {kind!r}")
    return reader(path)


def serialize(obj, path, kind: str) -> None:
    """Write a container back to disk; inverse of ingest for every kind."""
    with open(path, "w", encoding="utf-8") as fh:
        if kind in ("collection", "queries"):
            for tid, text in obj.items():
                fh.write(f"{tid}\t{text}\n")
        elif kind == "qrels":
            for qid in sorted(obj.relevant):
                for docid in sorted(obj.relevant[qid]):
                    fh.write(f"{qid} 0 {docid} 1\n")
        elif kind == "triples":
            for t in obj:
                fh.write("\t".join((t.query_id, t.positive) + t.negatives) + "\n")
        else:
            raise ValueError(f"unknown container kind {kind!r}")

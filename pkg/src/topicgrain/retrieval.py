"""MaxSim scoring, exhaustive search, TREC-style evaluation, and the trade-off score.

Run file format: ``<qid> Q0 <docid> <rank> <score> <tag>`` per line.
Metrics file format: ``<metric>\\t<value>`` per line.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import Judgments
from .encoder import Representation
from .errors import EmptyRun, InvalidK, InvalidSpace, ParseError, ShapeError
from .index import RepresentationIndex


def _entries(rep) -> np.ndarray:
    if isinstance(rep, Representation):
        return rep.vectors
    return np.asarray(rep)


def maxsim(query_rep, doc_rep) -> float:
    """Sum over query entries of the best dot product against the document.

    Reference implementation with a pinned arithmetic order: per-pair
    ``np.dot`` in float64, documents scanned in storage order (first maximum
    wins), query entries accumulated in storage order. Vectorized paths match
    this up to float associativity; exactness tests compare against it.
    """
    eq = _entries(query_rep).astype(np.float64, copy=False)
    ed = _entries(doc_rep).astype(np.float64, copy=False)
    if eq.ndim != 2 or ed.ndim != 2 or eq.shape[0] == 0 or ed.shape[0] == 0:
        raise ValueError("representations must be non-empty 2-d arrays")
    if eq.shape[1] != ed.shape[1]:
        raise ShapeError(f"query dim {eq.shape[1]} != document dim {ed.shape[1]}")
    total = 0.0
    for i in range(eq.shape[0]):
        best = -np.inf
        for j in range(ed.shape[0]):
            s = float(np.dot(eq[i], ed[j]))
            if s > best:
                best = s
        total += best
    return total


@dataclass
class RankedList:
    """Descending-score ranking with ties broken by ascending doc id."""

    query_id: str
    items: list[tuple[str, float]] = field(default_factory=list)

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.items]


def score_index(index: RepresentationIndex, query_rep) -> np.ndarray:
    """MaxSim of one query against every document.

    Each document is scored from its own entry matrix in one product, so
    byte-identical documents always receive byte-identical scores and the
    ranking tiebreak really engages on them. (A single stacked all-documents
    product would let BLAS round identical rows differently by position.)
    """
    eq = _entries(query_rep).astype(np.float64, copy=False)
    if eq.ndim != 2 or eq.shape[0] == 0:
        raise ValueError("query representation is empty")
    if eq.shape[1] != index.dim:
        raise ShapeError(f"query dim {eq.shape[1]} != index dim {index.dim}")
    scores = np.empty(len(index))
    for i, vecs in enumerate(index.vectors64()):
        sims = vecs @ eq.T  # (n_d, n_q)
        scores[i] = float(sims.max(axis=0).sum())
    return scores


def search(index: RepresentationIndex, query_rep, k: int) -> RankedList:
    """Exhaustive top-k of the collection under MaxSim."""
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    scores = score_index(index, query_rep)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.doc_ids[i]))
    qid = query_rep.text_id if isinstance(query_rep, Representation) else ""
    return RankedList(qid, [(index.doc_ids[i], float(scores[i])) for i in order[:k]])


@dataclass
class Metrics:
    mrr_at_k: float
    recall_at_k: float
    map: float
    mrr_cutoff: int
    recall_cutoff: int
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float]]:
        return [
            (f"mrr_at_{self.mrr_cutoff}", self.mrr_at_k),
            (f"recall_at_{self.recall_cutoff}", self.recall_at_k),
            ("map", self.map),
        ]


def _ranking_of(run_entry) -> list[str]:
    if isinstance(run_entry, RankedList):
        return run_entry.doc_ids()
    return list(run_entry)


def evaluate(
    run, judgments: Judgments, mrr_cutoff: int = 10, recall_cutoff: int = 1000
) -> Metrics:
    """Standard definitions: reciprocal rank of the first relevant document
    within the MRR cutoff (0 if none), fraction of the relevant set retrieved
    within the recall cutoff, and average precision over the full ranking
    normalized by the relevant-set size.

    Run queries without judgments are skipped with a warning.
    """
    if isinstance(run, dict):
        rankings = {qid: _ranking_of(r) for qid, r in run.items()}
    else:
        rankings = {r.query_id: r.doc_ids() for r in run}
    if not rankings:
        raise EmptyRun("run contains no queries")
    per_query: dict[str, dict[str, float]] = {}
    for qid, docs in rankings.items():
        if qid not in judgments:
            warnings.warn(f"query {qid!r} has no judgments; skipped", stacklevel=2)
            continue
        relevant = judgments[qid]
        rr = 0.0
        for rank, doc in enumerate(docs[:mrr_cutoff], 1):
            if doc in relevant:
                rr = 1.0 / rank
                break
        found = sum(1 for doc in docs[:recall_cutoff] if doc in relevant)
        recall = found / len(relevant)
        hits = 0
        precision_sum = 0.0
        for rank, doc in enumerate(docs, 1):
            if doc in relevant:
                hits += 1
                precision_sum += hits / rank
        ap = precision_sum / len(relevant)
        per_query[qid] = {"rr": rr, "recall": recall, "ap": ap}
    if not per_query:
        raise EmptyRun("no run query has judgments")
    n = len(per_query)
    return Metrics(
        sum(q["rr"] for q in per_query.values()) / n,
        sum(q["recall"] for q in per_query.values()) / n,
        sum(q["ap"] for q in per_query.values()) / n,
        mrr_cutoff,
        recall_cutoff,
        per_query,
    )


def tradeoff(mrr: float, space_gib: float) -> float:
    """Retrieval quality per unit of storage: mrr/space, in 1e-3 per GiB."""
    if space_gib <= 0:
        raise InvalidSpace(f"space must be positive, got {space_gib}")
    return mrr / space_gib * 1000.0


def write_run(path, ranked_lists: list[RankedList], tag: str = "topicgrain") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rl in ranked_lists:
            for rank, (doc_id, score) in enumerate(rl.items, 1):
                fh.write(f"{rl.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def read_run(path) -> dict[str, list[str]]:
    """Rankings per query, ordered by the rank field."""
    rows: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(path, line_no, "expected 6 whitespace-separated fields")
            qid, _, docid, rank, _, _ = parts
            try:
                rows.setdefault(qid, []).append((int(rank), docid))
            except ValueError:
                raise ParseError(path, line_no, f"rank {rank!r} is not an integer")
    return {qid: [d for _, d in sorted(items)] for qid, items in rows.items()}


def write_metrics(path, metrics: Metrics, extra: list[tuple[str, float]] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in list(metrics.rows()) + list(extra):
            fh.write(f"{name}\t{value:.6f}\n")

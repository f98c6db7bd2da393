"""Planted-topic synthetic datasets for end-to-end checks.

Every topic owns a disjoint word set. Documents draw their words from one or
two planted topics; queries draw from exactly one. A document is relevant to
a query when the query's topic is among the document's planted topics, which
gives the retrieval task an unambiguous ground truth.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import Judgments, TrainingSet, Triple


@dataclass(frozen=True)
class SynthSpec:
    topics: int = 8
    docs: int = 2000
    queries: int = 200
    seed: int = 7
    words_per_topic: int = 60
    doc_len: int = 160
    query_len: int = 8
    topics_per_doc: int = 2
    triples_per_query: int = 2
    negatives: int = 2

    def __post_init__(self):
        if self.topics < 2 or self.topics_per_doc not in (1, 2):
            raise ValueError("need >= 2 topics and 1 or 2 topics per document")
        if self.docs < self.topics or self.queries < 1:
            raise ValueError("too few documents or queries")


def planted_vocabulary(spec: SynthSpec) -> list[list[str]]:
    """Disjoint word lists, one per topic."""
    return [
        [f"t{t:02d}w{j:03d}" for j in range(spec.words_per_topic)]
        for t in range(spec.topics)
    ]


def generate(spec: SynthSpec):
    """Build (collection, queries, judgments, training set, doc topic sets)."""
    rng = np.random.default_rng(spec.seed)
    words = planted_vocabulary(spec)

    collection: dict[str, str] = {}
    doc_topics: dict[str, tuple[int, ...]] = {}
    for i in range(spec.docs):
        doc_id = f"d{i:05d}"
        if spec.topics_per_doc == 1:
            topics = (int(rng.integers(spec.topics)),)
            ratio = 1.0
        else:
            pair = rng.choice(spec.topics, size=2, replace=False)
            topics = (int(pair[0]), int(pair[1]))
            ratio = float(rng.uniform(0.55, 0.75))
        picks = []
        for _ in range(spec.doc_len):
            t = topics[0] if (len(topics) == 1 or rng.random() < ratio) else topics[1]
            picks.append(words[t][int(rng.integers(spec.words_per_topic))])
        collection[doc_id] = " ".join(picks)
        doc_topics[doc_id] = topics

    queries: dict[str, str] = {}
    query_topic: dict[str, int] = {}
    for i in range(spec.queries):
        qid = f"q{i:04d}"
        t = i % spec.topics
        picks = [words[t][int(rng.integers(spec.words_per_topic))] for _ in range(spec.query_len)]
        queries[qid] = " ".join(picks)
        query_topic[qid] = t

    judgments = Judgments()
    relevant_by_topic: dict[int, list[str]] = {t: [] for t in range(spec.topics)}
    for doc_id, topics in doc_topics.items():
        for t in topics:
            relevant_by_topic[t].append(doc_id)
    for qid, t in query_topic.items():
        for doc_id in relevant_by_topic[t]:
            judgments.add(qid, doc_id, 1)

    all_docs = list(collection)
    training = TrainingSet()
    for qid, t in query_topic.items():
        relevant = relevant_by_topic[t]
        irrelevant = [d for d in all_docs if t not in doc_topics[d]]
        for _ in range(spec.triples_per_query):
            pos = relevant[int(rng.integers(len(relevant)))]
            negs = rng.choice(len(irrelevant), size=spec.negatives, replace=False)
            training.triples.append(
                Triple(qid, pos, tuple(irrelevant[int(j)] for j in negs))
            )
    return collection, queries, judgments, training, doc_topics


def write_dataset(out_dir, spec: SynthSpec) -> dict[str, str]:
    """Generate and write the four files; identical bytes for identical specs."""
    from .corpus import serialize

    collection, queries, judgments, training, _ = generate(spec)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "collection": os.path.join(out_dir, "collection.tsv"),
        "queries": os.path.join(out_dir, "queries.tsv"),
        "qrels": os.path.join(out_dir, "qrels.txt"),
        "triples": os.path.join(out_dir, "triples.tsv"),
    }
    serialize(collection, paths["collection"], "collection")
    serialize(queries, paths["queries"], "queries")
    serialize(judgments, paths["qrels"], "qrels")
    serialize(training, paths["triples"], "triples")
    return paths

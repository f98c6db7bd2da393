"""Shared fixtures: small vocabularies and the planted 4-topic corpus."""

import numpy as np
import pytest

from topicgrain.corpus import CorpusLimits, build_vocab
from topicgrain.synth import SynthSpec, generate
from topicgrain.topics import LdaConfig, fit_lda


@pytest.fixture(scope="session")
def planted4():
    """4 planted topics with disjoint 50-word vocabularies, 400 single-topic
    documents of 60 tokens; LDA fitted with K=4 and 200 sweeps."""
    spec = SynthSpec(
        topics=4, docs=400, queries=8, seed=11, words_per_topic=50,
        doc_len=60, query_len=6, topics_per_doc=1,
    )
    collection, queries, judgments, training, doc_topics = generate(spec)
    vocab = build_vocab(collection.values(), min_count=1)
    cfg = LdaConfig(k=4, train_iters=200, infer_iters=200, seed=5)
    limits = CorpusLimits(max_query_len=32, max_doc_len=180)
    model = fit_lda(collection, vocab, cfg, limits)
    return {
        "spec": spec,
        "collection": collection,
        "queries": queries,
        "judgments": judgments,
        "training": training,
        "doc_topics": doc_topics,
        "vocab": vocab,
        "model": model,
        "limits": limits,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(42)

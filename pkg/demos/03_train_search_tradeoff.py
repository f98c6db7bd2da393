"""Train the encoder contrastively, search, and compare the storage trade-off.

Small planted task, a couple of minutes of CPU: the topic-grained index
should match or beat the global-grained one on ranking quality while staying
far smaller than a word-grained index of the same collection.
"""

from topicgrain.corpus import CorpusLimits, TextKind, build_vocab
from topicgrain.encoder import Encoder, Granularity
from topicgrain.index import QuantScheme, build_index
from topicgrain.retrieval import evaluate, search, tradeoff
from topicgrain.synth import SynthSpec, generate
from topicgrain.topics import LdaConfig, TopicExtractionConfig, fit_lda
from topicgrain.trainer import TrainConfig, train

spec = SynthSpec(topics=6, docs=500, queries=60, seed=4, doc_len=120)
collection, queries, judgments, triples, _ = generate(spec)
vocab = build_vocab(collection.values(), min_count=1)
limits = CorpusLimits(32, 180)
extraction = TopicExtractionConfig()
lda = fit_lda(collection, vocab, LdaConfig(k=6, train_iters=120, seed=4), limits)

results = {}
for granularity in (Granularity.TOPIC, Granularity.GLOBAL):
    cfg = TrainConfig(m=2, batch_size=8, epochs=5, seed=4, granularity=granularity)
    ck = train(cfg, triples, collection, queries, lda, vocab, extraction, limits,
               d_c=32, d_a=32, dim=128)
    print(f"{granularity.value}: loss per epoch "
          + " ".join(f"{l:.3f}" for l in ck.history))
    enc = Encoder(ck.params, vocab, lda, extraction, limits)
    idx = build_index(collection, enc, QuantScheme.F16, granularity)
    run = {}
    for qid, text in queries.items():
        rep = enc.encode_text(qid, text, TextKind.QUERY, granularity)
        run[qid] = search(idx, rep, 500)
    metrics = evaluate(run, judgments)
    gib = idx.space_stats().total_gib
    results[granularity.value] = (metrics, gib)
    print(f"  mrr@10={metrics.mrr_at_k:.4f} map={metrics.map:.4f} "
          f"space={gib * 2**30 / 1e6:.2f} MB "
          f"tradeoff={tradeoff(metrics.mrr_at_k, gib):.1f}e-3/GiB")

topic_metrics, _ = results["topic"]
global_metrics, _ = results["global"]
print("\ntopic vs global mrr@10: "
      f"{topic_metrics.mrr_at_k:.4f} vs {global_metrics.mrr_at_k:.4f}")

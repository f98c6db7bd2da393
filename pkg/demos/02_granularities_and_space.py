"""One text, three granularities: how entry counts drive storage cost.

A document becomes N vectors in the index. Word granularity stores one per
word, global granularity one per document, topic granularity one per
representative topic; the byte math follows directly.
"""

from topicgrain.corpus import CorpusLimits, TextKind, build_vocab
from topicgrain.encoder import Encoder, Granularity, init_encoder_params
from topicgrain.index import QuantScheme, build_index
from topicgrain.synth import SynthSpec, generate
from topicgrain.topics import LdaConfig, TopicExtractionConfig, fit_lda

spec = SynthSpec(topics=6, docs=400, queries=4, seed=2, doc_len=120)
collection, _, _, _, _ = generate(spec)
vocab = build_vocab(collection.values(), min_count=1)
limits = CorpusLimits(32, 180)
lda = fit_lda(collection, vocab, LdaConfig(k=6, train_iters=120, seed=2), limits)
params = init_encoder_params(len(vocab), 180, 6, d_c=32, d_a=32, dim=128, seed=2)
enc = Encoder(params, vocab, lda, TopicExtractionConfig(), limits)

doc_id = next(iter(collection))
for granularity in Granularity:
    rep = enc.encode_text(doc_id, collection[doc_id], TextKind.DOCUMENT, granularity)
    print(f"{granularity.value:>6}: {rep.count:4d} entries of dim {rep.dim}")

print("\nindexing all 400 documents at dim 128, float16:")
for granularity in (Granularity.WORD, Granularity.GLOBAL, Granularity.TOPIC):
    idx = build_index(collection, enc, QuantScheme.F16, granularity)
    stats = idx.space_stats()
    print(
        f"{granularity.value:>6}: {stats.embeddings_stored:6d} vectors, "
        f"payload {stats.payload_bytes / 1e6:7.2f} MB, "
        f"mean {stats.mean_entries:6.1f} entries/doc"
    )

print("\nquantization schemes on the topic-grained index:")
for scheme in QuantScheme:
    idx = build_index(collection, enc, scheme, Granularity.TOPIC)
    stats = idx.space_stats()
    print(f"{scheme.value:>4}: payload {stats.payload_bytes / 1e6:6.2f} MB "
          f"({scheme.bytes_per_dim} byte(s) per dimension)")

"""Contextual encoding, bucketing, attention pooling, projection, and the
full per-text pipeline at all three granularities."""

import math

import numpy as np
import pytest

from topicgrain.corpus import CorpusLimits, TextKind, TokenSeq, build_vocab, tokenize
from topicgrain.encoder import (
    Encoder,
    Granularity,
    attention_pool,
    bucket_by_topic,
    encode_contextual,
    init_encoder_params,
    load_params,
    params_from_bytes,
    params_to_bytes,
    project,
    save_params,
    text_forward,
    pooling_plan,
    _pool_attention,
)
from topicgrain.errors import EmptyBucket
from topicgrain.topics import TopicAssignmentTable, TopicExtractionConfig


def tiny_params(seed=0, v=30, max_len=40, k=4, d_c=8, d_a=8, dim=8):
    return init_encoder_params(v, max_len, k, d_c, d_a, dim, seed)


def seq_of(tokens):
    return TokenSeq("t", tuple(tokens), TextKind.DOCUMENT)


class TestContextualEncoding:
    def test_output_length_matches_input(self, rng):
        params = tiny_params()
        for _ in range(1000):
            n = int(rng.integers(1, params.max_len + 1))
            tokens = tuple(int(t) for t in rng.integers(0, params.vocab_size, n))
            c = encode_contextual(params, seq_of(tokens))
            assert c.shape == (n, params.d_c)
            assert np.all(np.isfinite(c))

    def test_position_signal_distinguishes_repeats(self):
        params = tiny_params()
        tokens = (1, 3, 7, 9, 11, 5, 9, 13, 6)  # token 9 at positions 3 and 6
        c = encode_contextual(params, seq_of(tokens))
        assert not np.allclose(c[3], c[6])

    def test_zero_mixer_weights_reduce_to_embedding_sum(self):
        params = tiny_params()
        for name in ("wq", "wk", "wv", "wo", "wf"):
            getattr(params, name)[:] = 0.0
        tokens = (1, 3, 6, 7, 8)
        c = encode_contextual(params, seq_of(tokens))
        expected = params.tok_emb[list(tokens)] + params.pos_emb[:5]
        np.testing.assert_array_equal(c, expected)

    def test_length_and_index_validation(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            encode_contextual(params, seq_of(tuple(range(params.vocab_size, params.vocab_size + 2))))
        with pytest.raises(ValueError):
            encode_contextual(params, seq_of((1,) * (params.max_len + 1)))


class TestBucketByTopic:
    def test_empty_table_gives_empty_buckets(self, rng):
        c = rng.standard_normal((5, 8))
        table = TopicAssignmentTable(((), (), (), (), ()))
        assert bucket_by_topic(c, table) == {}

    def test_multi_topic_word_lands_in_both_buckets(self, rng):
        c = rng.standard_normal((3, 8))
        table = TopicAssignmentTable(((), (), (0, 1)))
        buckets = bucket_by_topic(c, table)
        assert set(buckets) == {0, 1}
        np.testing.assert_array_equal(buckets[0], c[2:3])
        np.testing.assert_array_equal(buckets[1], c[2:3])

    def test_sizes_sum_to_assignment_count(self, rng):
        for _ in range(25):
            n = 20
            c = rng.standard_normal((n, 4))
            rows = []
            for _ in range(n):
                count = int(rng.integers(0, 4))
                rows.append(tuple(sorted(rng.choice(3, size=count, replace=False).tolist())))
            table = TopicAssignmentTable(tuple(rows))
            buckets = bucket_by_topic(c, table)
            assert sum(b.shape[0] for b in buckets.values()) == table.total_assignments


class TestAttentionPool:
    def test_singleton_bucket_passes_through(self, rng):
        params = tiny_params()
        u = rng.standard_normal((1, params.d_c))
        np.testing.assert_array_equal(attention_pool(params, u, 0), u[0])

    def test_zero_query_gives_mean(self, rng):
        params = tiny_params()
        params.topic_q[2][:] = 0.0
        bucket = rng.standard_normal((6, params.d_c))
        np.testing.assert_allclose(
            attention_pool(params, bucket, 2), bucket.mean(axis=0), atol=1e-12
        )

    def test_hand_computed_two_vector_case(self):
        params = tiny_params(d_c=2, d_a=2, dim=2, v=10, max_len=10, k=2)
        params.attn_w[:] = np.eye(2)
        params.attn_b[:] = 0.0
        params.topic_q[0] = (1.0, 0.0)
        bucket = np.array([[0.5, 0.0], [-0.5, 0.0]])
        # logits are tanh(+-0.5); softmax weights follow from them directly
        l0, l1 = math.tanh(0.5), math.tanh(-0.5)
        e0, e1 = math.exp(l0), math.exp(l1)
        w0, w1 = e0 / (e0 + e1), e1 / (e0 + e1)
        expected = np.array([0.5 * w0 - 0.5 * w1, 0.0])
        np.testing.assert_allclose(attention_pool(params, bucket, 0), expected, atol=1e-12)

    def test_empty_bucket_raises(self):
        params = tiny_params()
        with pytest.raises(EmptyBucket):
            attention_pool(params, np.empty((0, params.d_c)), 0)

    def test_weights_sum_to_one_and_stay_positive(self, rng):
        params = tiny_params()
        for _ in range(50):
            bucket = rng.standard_normal((int(rng.integers(1, 9)), params.d_c))
            pool = _pool_attention(params, bucket, int(rng.integers(params.num_topics)))
            w = pool["weights"]
            assert abs(w.sum() - 1.0) <= 1e-9
            assert (w > 0).all()

    def test_pooled_output_in_bucket_convex_hull(self, rng):
        params = tiny_params()
        for _ in range(25):
            bucket = rng.standard_normal((int(rng.integers(1, 7)), params.d_c))
            pooled = attention_pool(params, bucket, 1)
            assert (pooled >= bucket.min(axis=0) - 1e-12).all()
            assert (pooled <= bucket.max(axis=0) + 1e-12).all()

    def test_permutation_invariance(self, rng):
        params = tiny_params()
        bucket = rng.standard_normal((7, params.d_c))
        base = attention_pool(params, bucket, 3)
        for _ in range(5):
            perm = rng.permutation(7)
            np.testing.assert_allclose(
                attention_pool(params, bucket[perm], 3), base, atol=1e-12
            )


class TestProject:
    def test_identity_projection_normalizes(self):
        params = tiny_params(d_c=8, dim=8)
        params.proj[:] = np.eye(8)
        v = np.zeros(8)
        v[0], v[1] = 3.0, 4.0
        out = project(params, v)
        np.testing.assert_allclose(out[:2], [0.6, 0.8], atol=1e-12)
        np.testing.assert_allclose(out[2:], 0.0, atol=1e-12)

    def test_unit_norm_for_random_inputs(self, rng):
        params = tiny_params()
        for _ in range(100):
            out = project(params, rng.standard_normal(params.d_c))
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-6

    def test_zero_vector_stays_zero(self):
        params = tiny_params()
        out = project(params, np.zeros(params.d_c))
        assert (out == 0.0).all()

    def test_normalization_can_be_disabled(self, rng):
        params = tiny_params()
        v = rng.standard_normal(params.d_c)
        np.testing.assert_array_equal(project(params, v, normalize=False), params.proj @ v)


class TestEncodeText:
    @pytest.fixture()
    def pipeline(self, planted4):
        params = init_encoder_params(
            len(planted4["vocab"]), 180, planted4["model"].k, 16, 16, 64, seed=3
        )
        return Encoder(
            params,
            planted4["vocab"],
            planted4["model"],
            TopicExtractionConfig(0.2, 0.01, 0.3),
            planted4["limits"],
        )

    def test_global_mode_single_entry(self, pipeline, planted4):
        doc_id = next(iter(planted4["collection"]))
        rep = pipeline.encode_text(
            doc_id, planted4["collection"][doc_id], TextKind.DOCUMENT, Granularity.GLOBAL
        )
        assert rep.count == 1
        assert rep.topic_ids == (None,)

    def test_word_mode_one_entry_per_content_token(self, pipeline, planted4):
        text = " ".join(["t00w000"] * 400)
        rep = pipeline.encode_text("d", text, TextKind.DOCUMENT, Granularity.WORD)
        assert rep.count == 178  # 180-token cap minus the two prefix tokens

    def test_topic_mode_entry_count_matches_plan(self, pipeline, planted4):
        vocab, limits = planted4["vocab"], planted4["limits"]
        model = planted4["model"]
        for doc_id in list(planted4["collection"])[:5]:
            seq = tokenize(vocab, doc_id, planted4["collection"][doc_id],
                           TextKind.DOCUMENT, limits)
            rep = pipeline.encode_tokens(seq, Granularity.TOPIC)
            table = pipeline.table_for(seq)
            assert rep.count == len(table.topics_present)
            assert rep.count <= model.k
            assert rep.topic_ids == tuple(sorted(table.topics_present))

    def test_topic_mode_entries_sorted_by_topic(self, pipeline, planted4):
        doc_id = list(planted4["collection"])[7]
        rep = pipeline.encode_text(
            doc_id, planted4["collection"][doc_id], TextKind.DOCUMENT, Granularity.TOPIC
        )
        ids = [t for t in rep.topic_ids if t is not None]
        assert ids == sorted(ids)

    def test_empty_buckets_fall_back_to_global(self, pipeline):
        # A text of purely unknown words has no topic assignments.
        rep = pipeline.encode_text("d", "zzzz yyyy xxxx", TextKind.DOCUMENT, Granularity.TOPIC)
        assert rep.count == 1
        assert rep.topic_ids == (None,)
        assert rep.degenerate

    @pytest.mark.parametrize("granularity", list(Granularity))
    def test_entries_unit_norm_or_flagged(self, pipeline, planted4, granularity):
        for doc_id in list(planted4["collection"])[:5]:
            rep = pipeline.encode_text(
                doc_id, planted4["collection"][doc_id], TextKind.DOCUMENT, granularity
            )
            norms = np.linalg.norm(rep.vectors, axis=1)
            for n in norms:
                assert abs(n - 1.0) <= 1e-5 or (n == 0.0 and rep.degenerate)

    def test_vectors_are_float32(self, pipeline, planted4):
        doc_id = next(iter(planted4["collection"]))
        rep = pipeline.encode_text(
            doc_id, planted4["collection"][doc_id], TextKind.DOCUMENT, Granularity.TOPIC
        )
        assert rep.vectors.dtype == np.float32


class TestParamsPersistence:
    def test_tgen_round_trip_bit_identical(self, tmp_path):
        params = tiny_params(seed=5)
        path = tmp_path / "p.tgen"
        save_params(params, path)
        blob = path.read_bytes()
        loaded = load_params(path)
        assert params_to_bytes(loaded) == blob
        for name, tensor in loaded.tensors():
            np.testing.assert_array_equal(
                tensor, getattr(params, name).astype(np.float32).astype(np.float64)
            )

    def test_block_parse_rejects_bad_magic(self):
        with pytest.raises(Exception):
            params_from_bytes(b"XXXX" + bytes(64))

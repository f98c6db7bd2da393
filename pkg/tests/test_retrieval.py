"""MaxSim, search, TREC metrics, and the trade-off score."""

import numpy as np
import pytest

from topicgrain.corpus import Judgments
from topicgrain.encoder import Granularity, Representation
from topicgrain.errors import (
    EmptyRun,
    InvalidK,
    InvalidSpace,
    ShapeError,
)
from topicgrain.index import IndexRecord, QuantScheme, RepresentationIndex, quantize
from topicgrain.retrieval import (
    RankedList,
    evaluate,
    maxsim,
    read_run,
    score_index,
    search,
    tradeoff,
    write_metrics,
    write_run,
)


def brute_force_maxsim(eq, ed):
    """Nested-loop oracle sharing only the dot-product primitive."""
    total = 0.0
    for q in eq:
        sims = [float(np.dot(q, d)) for d in ed]
        total += max(sims)
    return total


def unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim))
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


class TestMaxSim:
    def test_identical_unit_vectors_score_one(self):
        e = np.array([[1.0, 0.0]])
        assert maxsim(e, e) == 1.0

    def test_hand_evaluated_two_by_one(self):
        eq = np.array([[1.0, 0.0], [0.0, 1.0]])
        ed = np.array([[0.0, 1.0]])
        assert maxsim(eq, ed) == 1.0

    def test_matches_brute_force_oracle_exactly(self, rng):
        for _ in range(200):
            dim = int(rng.integers(4, 65))
            eq = unit_rows(rng, int(rng.integers(1, 17)), dim)
            ed = unit_rows(rng, int(rng.integers(1, 17)), dim)
            assert maxsim(eq, ed) == brute_force_maxsim(
                eq.astype(np.float64), ed.astype(np.float64)
            )

    def test_dim_mismatch_raises(self):
        with pytest.raises(ShapeError):
            maxsim(np.ones((1, 4)), np.ones((1, 5)))

    def test_empty_representation_raises(self):
        with pytest.raises(ValueError):
            maxsim(np.empty((0, 4)), np.ones((1, 4)))

    def test_permutation_invariance(self, rng):
        eq = unit_rows(rng, 5, 8)
        ed = unit_rows(rng, 7, 8)
        base = maxsim(eq, ed)
        for _ in range(5):
            assert maxsim(eq, ed[rng.permutation(7)]) == base
            assert abs(maxsim(eq[rng.permutation(5)], ed) - base) <= 1e-12

    def test_appending_query_entries_monotone_on_nonnegative_vectors(self, rng):
        dim = 6
        ed = np.abs(unit_rows(rng, 5, dim))
        ed /= np.linalg.norm(ed, axis=1, keepdims=True)
        eq = np.abs(unit_rows(rng, 3, dim))
        eq /= np.linalg.norm(eq, axis=1, keepdims=True)
        score = maxsim(eq[:1], ed)
        for n in range(2, 4):
            bigger = maxsim(eq[:n], ed)
            assert bigger >= score
            score = bigger


def make_index(rng, docs=50, dim=8, entries=(1, 5), scheme=QuantScheme.F32):
    records = []
    for i in range(docs):
        n = int(rng.integers(entries[0], entries[1] + 1))
        vecs = unit_rows(rng, n, dim)
        records.append(
            IndexRecord(
                f"d{i:03d}",
                tuple(int(t) for t in rng.integers(0, 4, n)),
                [quantize(v, scheme) for v in vecs],
            )
        )
    return RepresentationIndex(dim, scheme, Granularity.TOPIC, bytes(32), records)


class TestSearch:
    def test_k_at_least_corpus_size_ranks_everything(self, rng):
        idx = make_index(rng, docs=20)
        q = unit_rows(rng, 3, 8)
        assert len(search(idx, q, 1000).items) == 20

    def test_invalid_k_raises(self, rng):
        idx = make_index(rng, docs=5)
        with pytest.raises(InvalidK):
            search(idx, unit_rows(rng, 1, 8), 0)

    def test_self_similarity_ranks_first(self, rng):
        idx = make_index(rng, docs=30, scheme=QuantScheme.F32)
        probe = idx.vectors[17]
        ranked = search(idx, probe, 5)
        assert ranked.items[0][0] == "d017"

    def test_ranking_matches_brute_force_pass(self, rng):
        idx = make_index(rng, docs=50)
        for _ in range(10):
            q = unit_rows(rng, int(rng.integers(1, 5)), 8)
            expected = sorted(
                ((brute_force_maxsim(q.astype(np.float64), v.astype(np.float64)), d)
                 for d, v in zip(idx.doc_ids, idx.vectors)),
                key=lambda t: (-t[0], t[1]),
            )
            got = search(idx, q, 50)
            assert [d for _, d in expected] == got.doc_ids()

    def test_score_index_matches_maxsim_closely(self, rng):
        idx = make_index(rng, docs=25)
        q = unit_rows(rng, 4, 8)
        scores = score_index(idx, q)
        for i in range(25):
            assert abs(scores[i] - maxsim(q, idx.vectors[i])) <= 1e-10

    def test_ties_break_by_ascending_doc_id(self, rng):
        v = unit_rows(rng, 1, 8)
        records = [
            IndexRecord(doc_id, (0,), [quantize(v[0], QuantScheme.F32)])
            for doc_id in ("zz", "aa", "mm")
        ]
        idx = RepresentationIndex(8, QuantScheme.F32, Granularity.TOPIC, bytes(32), records)
        ranked = search(idx, v, 3)
        assert ranked.doc_ids() == ["aa", "mm", "zz"]


def judge(pairs):
    j = Judgments()
    for qid, docid in pairs:
        j.add(qid, docid, 1)
    return j


class TestEvaluate:
    def test_relevant_at_rank_one(self):
        run = {"q1": ["d1", "d2", "d3"]}
        metrics = evaluate(run, judge([("q1", "d1")]))
        assert metrics.mrr_at_k == 1.0

    def test_relevant_at_rank_three(self):
        run = {"q1": [f"d{i}" for i in range(1, 11)]}
        metrics = evaluate(run, judge([("q1", "d3")]))
        assert abs(metrics.mrr_at_k - 1 / 3) <= 1e-12

    def test_average_precision_two_relevant(self):
        run = {"q1": ["d1", "d2", "d3", "d4"]}
        metrics = evaluate(run, judge([("q1", "d1"), ("q1", "d3")]))
        assert abs(metrics.map - (1.0 + 2.0 / 3.0) / 2.0) <= 1e-12
        assert abs(metrics.map - 0.8333) <= 1e-4

    def test_mrr_zero_outside_cutoff(self):
        run = {"q1": [f"d{i}" for i in range(15)]}
        metrics = evaluate(run, judge([("q1", "d12")]), mrr_cutoff=10)
        assert metrics.mrr_at_k == 0.0
        assert metrics.map > 0.0

    def test_recall_counts_fraction_of_relevant_set(self):
        run = {"q1": ["d1", "d2"]}
        judgments = judge([("q1", "d1"), ("q1", "d9"), ("q1", "d8"), ("q1", "d7")])
        metrics = evaluate(run, judgments, recall_cutoff=2)
        assert abs(metrics.recall_at_k - 0.25) <= 1e-12

    def test_unjudged_queries_skipped_with_warning(self):
        run = {"q1": ["d1"], "q9": ["d1"]}
        with pytest.warns(UserWarning):
            metrics = evaluate(run, judge([("q1", "d1")]))
        assert list(metrics.per_query) == ["q1"]

    def test_empty_run_raises(self):
        with pytest.raises(EmptyRun):
            evaluate({}, judge([("q1", "d1")]))

    def test_ten_query_fixture_against_hand_oracle(self, rng):
        docs = [f"d{i}" for i in range(40)]
        run = {}
        judgments = Judgments()
        for qi in range(10):
            qid = f"q{qi}"
            order = list(rng.permutation(40))
            run[qid] = [docs[i] for i in order]
            for docid in rng.choice(docs, size=int(rng.integers(1, 6)), replace=False):
                judgments.add(qid, str(docid), 1)
        metrics = evaluate(run, judgments, mrr_cutoff=10, recall_cutoff=20)

        # independent single-pass oracle
        rrs, recalls, aps = [], [], []
        for qid, ranking in run.items():
            rel = judgments[qid]
            rr = 0.0
            for r, d in enumerate(ranking[:10], 1):
                if d in rel:
                    rr = 1.0 / r
                    break
            rrs.append(rr)
            recalls.append(len([d for d in ranking[:20] if d in rel]) / len(rel))
            hits, ap = 0, 0.0
            for r, d in enumerate(ranking, 1):
                if d in rel:
                    hits += 1
                    ap += hits / r
            aps.append(ap / len(rel))
        assert abs(metrics.mrr_at_k - np.mean(rrs)) <= 1e-12
        assert abs(metrics.recall_at_k - np.mean(recalls)) <= 1e-12
        assert abs(metrics.map - np.mean(aps)) <= 1e-12


class TestTradeoff:
    @pytest.mark.parametrize(
        "mrr,space,expected",
        [
            (0.361, 15.6, 23.1),
            (0.360, 154.0, 2.3),
            (0.310, 25.3, 12.3),
            (0.433, 51.4, 8.4),
            (0.376, 83.2, 4.5),
        ],
    )
    def test_reference_points_to_one_decimal(self, mrr, space, expected):
        assert abs(tradeoff(mrr, space) - expected) < 0.05

    def test_nonpositive_space_rejected(self):
        with pytest.raises(InvalidSpace):
            tradeoff(0.5, 0.0)


class TestRunFiles:
    def test_round_trip(self, tmp_path):
        ranked = [
            RankedList("q1", [("d3", 1.5), ("d1", 1.25)]),
            RankedList("q2", [("d2", 0.5)]),
        ]
        path = tmp_path / "run.trec"
        write_run(path, ranked, tag="tag1")
        lines = path.read_text().splitlines()
        assert lines[0] == "q1 Q0 d3 1 1.500000 tag1"
        assert read_run(path) == {"q1": ["d3", "d1"], "q2": ["d2"]}

    def test_metrics_file_format(self, tmp_path):
        run = {"q1": ["d1"]}
        metrics = evaluate(run, judge([("q1", "d1")]))
        path = tmp_path / "metrics.tsv"
        write_metrics(path, metrics, [("space_gib", 1.5)])
        rows = dict(
            line.split("\t") for line in path.read_text().splitlines()
        )
        assert rows["mrr_at_10"] == "1.000000"
        assert rows["space_gib"] == "1.500000"

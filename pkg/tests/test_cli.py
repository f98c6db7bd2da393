"""Subcommand behavior, exit codes, config round-trips, artifact chains."""

import os

import pytest

from topicgrain.cli import dispatch
from topicgrain.config import (
    RunConfig,
    fingerprint,
    parse_config,
    parse_config_text,
    render_config,
)


def files_equal(a, b):
    with open(a, "rb") as fa, open(b, "rb") as fb:
        return fa.read() == fb.read()


class TestConfig:
    def test_render_parse_round_trip(self):
        cfg = RunConfig(seed=3, topics=12, theta_t=0.33, normalize=False,
                        learning_rate=0.0025, granularity="word", scheme="f16")
        assert parse_config(render_config(cfg)) == cfg

    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_config(render_config(cfg)) == cfg

    def test_alpha_eta_default_to_one_over_k(self):
        cfg = RunConfig(topics=16)
        assert cfg.alpha == 1 / 16 and cfg.eta == 1 / 16

    def test_unknown_key_rejected(self):
        with pytest.raises(Exception):
            parse_config_text("no_such_key=1\n")

    def test_dim_restricted_to_supported_range(self):
        with pytest.raises(ValueError):
            RunConfig(dim=100)

    def test_fingerprint_changes_with_model_fields_only(self):
        base = fingerprint(RunConfig(), b"v")
        assert fingerprint(RunConfig(theta_t=0.2), b"v") != base
        assert fingerprint(RunConfig(epochs=3), b"v") != base
        assert fingerprint(RunConfig(), b"w") != base
        # per-invocation knobs do not change the chain identity
        assert fingerprint(RunConfig(scheme="u8", granularity="word", k=7, threads=3), b"v") == base


class TestDispatchBasics:
    def test_unknown_subcommand_exits_one(self, capsys):
        assert dispatch(["frobnicate"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_flag_exits_one(self, capsys):
        assert dispatch(["synth", "--bogus", "1"]) == 1

    def test_missing_file_exits_one(self, tmp_path, capsys):
        rc = dispatch(["lda-train", "--collection", str(tmp_path / "nope.tsv"),
                       "--artifacts", str(tmp_path / "art")])
        assert rc == 1

    def test_grad_check_passes(self, capsys):
        assert dispatch(["grad-check", "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert "max_relative_error" in out

    def test_grad_check_fails_on_impossible_tolerance(self, capsys):
        assert dispatch(["grad-check", "--seed", "3", "--tolerance", "1e-18"]) == 2


class TestSynth:
    def test_identical_seeds_identical_files(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        args = ["synth", "--topics", "4", "--docs", "40", "--queries", "8", "--seed", "7"]
        assert dispatch(args + ["--out", a]) == 0
        assert dispatch(args + ["--out", b]) == 0
        for name in ("collection.tsv", "queries.tsv", "qrels.txt", "triples.tsv"):
            assert files_equal(os.path.join(a, name), os.path.join(b, name))

    def test_different_seed_different_collection(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert dispatch(["synth", "--docs", "40", "--queries", "8", "--seed", "1", "--out", a]) == 0
        assert dispatch(["synth", "--docs", "40", "--queries", "8", "--seed", "2", "--out", b]) == 0
        assert not files_equal(os.path.join(a, "collection.tsv"), os.path.join(b, "collection.tsv"))


class TestEval:
    def test_rank_one_fixture_prints_perfect_mrr(self, tmp_path, capsys):
        run = tmp_path / "r.trec"
        run.write_text("q1 Q0 d1 1 2.000000 t\nq1 Q0 d2 2 1.000000 t\n")
        qrels = tmp_path / "q.qrels"
        qrels.write_text("q1 0 d1 1\n")
        art = tmp_path / "art"
        art.mkdir()
        rc = dispatch(["eval", "--run", str(run), "--qrels", str(qrels),
                       "--artifacts", str(art)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mrr_at_10\t1.000000" in out
        assert (art / "metrics.tsv").exists()


@pytest.fixture(scope="module")
def mini_pipeline(tmp_path_factory):
    """A tiny but complete artifact chain used by the chain-integrity tests."""
    root = tmp_path_factory.mktemp("mini")
    data = str(root / "data")
    art = str(root / "art")
    common = ["--topics", "4", "--seed", "3", "--train-iters", "40",
              "--infer-iters", "20", "--epochs", "1", "--dim", "64"]
    assert dispatch(["synth", "--docs", "60", "--queries", "8", "--doc-len", "30",
                     "--words-per-topic", "20", "--out", data] + common) == 0
    assert dispatch(["lda-train", "--collection", f"{data}/collection.tsv",
                     "--artifacts", art] + common) == 0
    assert dispatch(["train", "--collection", f"{data}/collection.tsv",
                     "--queries", f"{data}/queries.tsv",
                     "--triples", f"{data}/triples.tsv",
                     "--artifacts", art] + common) == 0
    assert dispatch(["index", "--collection", f"{data}/collection.tsv",
                     "--artifacts", art] + common) == 0
    return {"data": data, "art": art, "common": common}


class TestArtifactChain:
    def test_search_and_eval_complete(self, mini_pipeline, capsys):
        data, art, common = (mini_pipeline[k] for k in ("data", "art", "common"))
        assert dispatch(["search", "--queries", f"{data}/queries.tsv",
                         "--artifacts", art] + common) == 0
        assert dispatch(["eval", "--qrels", f"{data}/qrels.txt",
                         "--artifacts", art, "--with-space"] + common) == 0
        out = capsys.readouterr().out
        assert "tradeoff_1e3_per_gib" in out

    def test_mismatched_config_refused(self, mini_pipeline, capsys):
        data, art, common = (mini_pipeline[k] for k in ("data", "art", "common"))
        drifted = [v if v != "0.15" else v for v in common] + ["--theta-t", "0.4"]
        rc = dispatch(["index", "--collection", f"{data}/collection.tsv",
                       "--artifacts", art] + drifted)
        assert rc == 1
        assert "fingerprint" in capsys.readouterr().err

    def test_encode_subcommand_writes_store(self, mini_pipeline):
        data, art, common = (mini_pipeline[k] for k in ("data", "art", "common"))
        out = os.path.join(art, "queries.tgix")
        assert dispatch(["encode", "--input", f"{data}/queries.tsv", "--kind", "query",
                         "--out", out, "--artifacts", art] + common) == 0
        assert os.path.exists(out)

    def test_space_report_runs(self, mini_pipeline, capsys):
        art = mini_pipeline["art"]
        assert dispatch(["space-report", "--index", f"{art}/index.tgix"]) == 0
        out = capsys.readouterr().out
        assert "payload_bytes" in out and "gib" in out

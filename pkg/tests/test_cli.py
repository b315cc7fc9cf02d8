import json

import pytest
from click.testing import CliRunner

from mmrag.cli import main
from mmrag.backends.mock import tagged_image
from mmrag.config import default_backends
from mmrag.corpus import Corpus, ImageAsset, PageRecord, QAQuadruple, save_corpus, save_testset


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def data(tmp_path, synthetic):
    d = tmp_path / "data"
    save_corpus(synthetic.corpus, d / "corpus.jsonl")
    save_testset(synthetic.testset, d / "testset.jsonl")
    return d


def invoke(runner, tmp_path, *args, config=None):
    base = ["--outdir", str(tmp_path / "out")]
    if config is not None:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        base = ["--config", str(path)] + base
    return runner.invoke(main, base + list(args), catch_exceptions=False)


class TestIngest:
    def test_summary_and_idempotent(self, runner, tmp_path, data):
        r1 = invoke(runner, tmp_path, "ingest", str(data / "corpus.jsonl"))
        assert r1.exit_code == 0 and "pages" in r1.output and "chunks" in r1.output
        first = (tmp_path / "out" / "corpus" / "chunks.jsonl").read_bytes()
        r2 = invoke(runner, tmp_path, "ingest", str(data / "corpus.jsonl"))
        assert r2.exit_code == 0 and r2.output == r1.output
        assert (tmp_path / "out" / "corpus" / "chunks.jsonl").read_bytes() == first

    def test_malformed_line_reports_line_number(self, runner, tmp_path, data):
        lines = (data / "corpus.jsonl").read_text().splitlines()
        lines[2] = "{not json"
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        r = invoke(runner, tmp_path, "ingest", str(bad))
        assert r.exit_code == 1 and "line 3" in r.output
        assert not (tmp_path / "out").exists()


class TestIndexAndAsk:
    def test_text_strategy_writes_one_index(self, runner, tmp_path, data):
        r = invoke(runner, tmp_path, "index", "--strategy", "TextOnly", "--corpus", str(data / "corpus.jsonl"))
        assert r.exit_code == 0, r.output
        assert sorted(p.name for p in (tmp_path / "out" / "indexes").iterdir()) == ["text.hnsw"]
        assert "chat calls: 0" in r.output

    def test_warm_summary_cache_needs_no_chat_calls(self, runner, tmp_path, data):
        args = ("index", "--strategy", "ImageSummary", "--corpus", str(data / "corpus.jsonl"))
        first = invoke(runner, tmp_path, *args)
        assert first.exit_code == 0 and "chat calls: 0" not in first.output
        second = invoke(runner, tmp_path, *args)
        assert second.exit_code == 0 and "chat calls: 0" in second.output

    def test_ask_baseline_needs_no_index(self, runner, tmp_path):
        r = invoke(runner, tmp_path, "ask", "--setting", "Baseline", "What is CTX[fact]?")
        assert r.exit_code == 0 and "ANS[fact]" in r.output and "Sources" not in r.output

    def test_ask_text_only_lists_sources(self, runner, tmp_path, data, synthetic):
        corpus = str(data / "corpus.jsonl")
        assert invoke(runner, tmp_path, "index", "--strategy", "TextOnly", "--corpus", corpus).exit_code == 0
        q = synthetic.testset[0]
        r = invoke(runner, tmp_path, "ask", "--setting", "TextOnlyRAG", "--corpus", corpus, q.question)
        assert r.exit_code == 0, r.output
        sources = [line for line in r.output.splitlines() if line.startswith("  - ")]
        assert 1 <= len(sources) <= 4 and all("(text)" in s for s in sources)

    def test_ask_builds_missing_index_in_memory(self, runner, tmp_path, data):
        r = invoke(runner, tmp_path, "ask", "--setting", "TextOnlyRAG", "--corpus", str(data / "corpus.jsonl"), "q?")
        assert r.exit_code == 0 and "Sources:" in r.output
        assert not (tmp_path / "out" / "indexes").exists()

    def test_ask_without_corpus(self, runner, tmp_path):
        r = invoke(runner, tmp_path, "ask", "--setting", "TextOnlyRAG", "q?")
        assert r.exit_code == 1 and "no corpus" in r.output

    def test_unknown_setting_is_usage_error(self, runner, tmp_path):
        r = invoke(runner, tmp_path, "ask", "--setting", "Nope", "q?")
        assert r.exit_code == 2

    def test_gsc_needs_qid(self, runner, tmp_path):
        assert invoke(runner, tmp_path, "ask", "--setting", "TextGSC", "q?").exit_code == 2


def live_config(key_env):
    backends = {k: v.model_dump() for k, v in default_backends().items()}
    backends["gpt-4v"].update(endpoint="https://models.example/v1", api_key_env=key_env)
    return {"backends": backends}


class TestConfigErrors:
    def test_missing_api_key_before_any_request(self, runner, tmp_path, data, monkeypatch):
        monkeypatch.delenv("MMRAG_ABSENT_KEY", raising=False)
        r = invoke(runner, tmp_path, "index", "--strategy", "ImageSummary", "--corpus", str(data / "corpus.jsonl"),
                   config=live_config("MMRAG_ABSENT_KEY"))
        assert r.exit_code == 1 and "MMRAG_ABSENT_KEY" in r.output

    def test_invalid_config_file(self, runner, tmp_path):
        r = invoke(runner, tmp_path, "synth", str(tmp_path / "s"), config={"seed": -1})
        assert r.exit_code == 1 and "invalid configuration" in r.output


class TestExperiment:
    def test_dry_run_makes_no_calls_and_writes_nothing(self, runner, tmp_path, data):
        r = runner.invoke(main, ["--outdir", str(tmp_path / "out"), "--dry-run", "run",
                                 "--corpus", str(data / "corpus.jsonl"), "--testset", str(data / "testset.jsonl")])
        assert r.exit_code == 0 and r.output.startswith("would run")
        assert not (tmp_path / "out").exists()

    def test_batch_eval_report(self, runner, tmp_path, data):
        common = ["--corpus", str(data / "corpus.jsonl"), "--testset", str(data / "testset.jsonl"),
                  "--settings", "Baseline,TextGSC"]
        assert invoke(runner, tmp_path, "batch", *common).exit_code == 0
        assert invoke(runner, tmp_path, "eval", *common).exit_code == 0
        r = invoke(runner, tmp_path, "report", *common, "--format", "csv")
        assert r.exit_code == 0
        assert "setting,generator,judge" in r.output
        assert (tmp_path / "out" / "Baseline" / "llava" / "report.md").is_file()

    def test_error_threshold_exit_code(self, runner, tmp_path):
        bad = ImageAsset("fig", b"MMFAIL", "image/png", ("d", 1))
        corpus = Corpus.from_pages([PageRecord("d", 1, "some text", tagged_image("x"))])
        d = tmp_path / "d"
        save_corpus(corpus, d / "corpus.jsonl")
        save_testset([QAQuadruple("q1", "What?", "a", "some text", bad, ("d", 1))], d / "testset.jsonl")
        r = invoke(runner, tmp_path, "run", "--corpus", str(d / "corpus.jsonl"), "--testset",
                   str(d / "testset.jsonl"), "--settings", "ImageGSC")
        assert r.exit_code == 3 and "exceeds threshold" in r.output


def test_synth_writes_files(runner, tmp_path):
    r = invoke(runner, tmp_path, "synth", str(tmp_path / "s"), "--questions", "6", "--hard", "2")
    assert r.exit_code == 0 and "6 questions (2 hard)" in r.output
    assert (tmp_path / "s" / "corpus.jsonl").is_file() and (tmp_path / "s" / "testset.jsonl").is_file()


def test_version(runner):
    r = runner.invoke(main, ["--version"])
    assert r.exit_code == 0 and "version" in r.output

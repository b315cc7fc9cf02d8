import hashlib
import time
from collections import Counter

import pytest

from mmrag.backends.base import ChatModel
from mmrag.config import RunConfig
from mmrag.corpus import save_corpus, save_testset
from mmrag.errors import ConfigError
from mmrag.evaluation import metrics_for
from mmrag.generation import ImageMode
from mmrag.pipeline import (
    Backends,
    Generator,
    Workspace,
    answer_question,
    cell_dir,
    judge_answers,
    run_experiment,
    run_setting,
)
from mmrag.retrieval import RetrievalConfig, Strategy
from mmrag.settings import SettingId

from conftest import chat_profile


@pytest.fixture
def config(tmp_path):
    return RunConfig(outdir=tmp_path / "runs", concurrency=2)


@pytest.fixture
def backends(config):
    return Backends.from_config(config)


@pytest.fixture
def workspace(synthetic, backends):
    return Workspace(synthetic.corpus, backends)


def gen(backends, name="gpt-4v"):
    return Generator(name, backends.chats[name])


def run(setting, synthetic, backends, workspace, generator=None, **kw):
    generator = generator or gen(backends)
    retrieval = RetrievalConfig(setting.strategy) if setting.strategy else None
    return run_setting(setting, synthetic.testset, generator, indexes=workspace.indexes_for(setting, generator),
                       retrieval=retrieval, text_backend=backends.text, mm_backend=backends.mm, **kw)


class TestGeneration:
    def test_baseline_never_searches(self, synthetic, backends, workspace):
        answers = run(SettingId.BASELINE, synthetic, backends, workspace)
        assert workspace._text is None and workspace._clip is None
        assert backends.text.calls == backends.mm.calls == 0
        assert all(a.ok and a.texts_sent == a.images_sent == 0 for a in answers)

    def test_baseline_five_questions_zero_index_searches(self, synthetic, backends, workspace):
        index = workspace.text()[0]
        g = gen(backends)
        for q in synthetic.testset[:5]:
            answer_question(SettingId.BASELINE, q, g)
        assert index.searches == 0

    def test_gold_context_answers_contain_gold_marker(self, synthetic, backends, workspace):
        answers = run(SettingId.MULTIMODAL_GSC, synthetic, backends, workspace)
        for a, q in zip(answers, synthetic.testset):
            assert f"ANS[{q.reference_answer}]" in a.answer_text
            assert a.texts_sent == 1 and a.images_sent == 1

    def test_separate_retrieval_two_plus_two(self, synthetic, backends, workspace):
        answers = run(SettingId.MULTIMODAL_CLIP, synthetic, backends, workspace)
        assert all(len(a.bundle.texts) == 2 and len(a.bundle.images) == 2 for a in answers)
        assert all(a.images_sent == 2 for a in answers)

    def test_single_image_generator(self, synthetic, backends, workspace):
        g = Generator("gpt-4v-si", backends.chats["gpt-4v"], ImageMode.SINGLE)
        answers = run(SettingId.IMAGE_ONLY_CLIP, synthetic, backends, workspace, generator=g)
        assert all(a.images_sent == 1 for a in answers)

    def test_missing_index_is_config_error(self, synthetic, backends):
        with pytest.raises(ConfigError, match="text index"):
            run_setting(SettingId.TEXT_ONLY_RAG, synthetic.testset, gen(backends),
                        retrieval=RetrievalConfig(Strategy.TEXT_ONLY), text_backend=backends.text)

    def test_missing_retrieval_config(self, synthetic, backends, workspace):
        g = gen(backends)
        with pytest.raises(ConfigError):
            run_setting(SettingId.TEXT_ONLY_RAG, synthetic.testset, g,
                        indexes=workspace.indexes_for(SettingId.TEXT_ONLY_RAG, g))

    def test_timeout_marks_question_failed(self, synthetic):
        class Slow(ChatModel):
            def _complete(self, messages):
                time.sleep(0.5)
                return "late"

        g = Generator("slow", Slow(chat_profile("slow")))
        answers = run_setting(SettingId.BASELINE, synthetic.testset[:2], g, timeout_s=0.05, workers=2)
        assert [a.qid for a in answers] == [q.qid for q in synthetic.testset[:2]]
        assert all(not a.ok and "timeout" in a.error for a in answers)

    def test_backend_failure_becomes_error_answer(self, synthetic):
        class Broken(ChatModel):
            def _complete(self, messages):
                from mmrag.errors import BackendError
                raise BackendError("down")

        answers = run_setting(SettingId.BASELINE, synthetic.testset[:3], Generator("b", Broken(chat_profile("b"))))
        assert all("down" in a.error for a in answers)


class TestJudging:
    def test_each_qid_judged_once_per_judge_and_metric(self, synthetic, backends, workspace):
        answers = run(SettingId.MULTIMODAL_SUMMARY, synthetic, backends, workspace)
        judges = {"gpt-4v": backends.chats["gpt-4v"], "llava": backends.chats["llava"]}
        log = judge_answers(answers, synthetic.testset, judges)
        counts = Counter(j.key for j in log)
        assert set(counts.values()) == {1}
        by_answer = {a.qid: a for a in answers}
        for q in synthetic.testset:
            a = by_answer[q.qid]
            expected = [m for m in metrics_for(SettingId.MULTIMODAL_SUMMARY)
                        if m.modality is None or (a.text_context if m.modality == "text" else a.image_context)]
            for judge in judges:
                got = [j.metric for j in log if j.qid == q.qid and j.judge == judge]
                assert got == expected

    def test_failed_answer_gives_error_rows(self, synthetic, backends):
        class Broken(ChatModel):
            def _complete(self, messages):
                from mmrag.errors import BackendError
                raise BackendError("down")

        answers = run_setting(SettingId.BASELINE, synthetic.testset[:1], Generator("b", Broken(chat_profile("b"))))
        log = judge_answers(answers, synthetic.testset, {"gpt-4v": backends.chats["gpt-4v"]})
        assert len(log) == 2 and all(j.grade is None and j.error for j in log)

    def test_order_follows_testset(self, synthetic, backends):
        answers = run_setting(SettingId.BASELINE, synthetic.testset, gen(backends))
        log = judge_answers(list(reversed(answers)), synthetic.testset, {"gpt-4v": backends.chats["gpt-4v"]})
        assert [j.qid for j in log[::2]] == [q.qid for q in synthetic.testset]


def file_hashes(root):
    return {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in root.rglob("*") if p.is_file()}


@pytest.fixture
def on_disk(tmp_path, synthetic):
    data = tmp_path / "data"
    data.mkdir()
    save_corpus(synthetic.corpus, data / "corpus.jsonl")
    save_testset(synthetic.testset, data / "testset.jsonl")
    return data


class TestExperiment:
    settings = ["Baseline", "TextOnlyRAG", "MultimodalSummary"]

    def test_run_and_resume(self, tmp_path, on_disk):
        cfg = RunConfig(corpus=on_disk / "corpus.jsonl", testset=on_disk / "testset.jsonl",
                        outdir=tmp_path / "out", settings=self.settings, generators=["gpt-4v"], judges=["gpt-4v"])
        first = run_experiment(cfg)
        assert first.generated == first.judged == 3
        for s in self.settings:
            assert (cell_dir(cfg.outdir, s, "gpt-4v") / "answers.jsonl").is_file()
        report = (cfg.outdir / "report.md").read_text()

        backends = Backends.from_config(cfg)
        again = run_experiment(cfg, backends=backends)
        assert again.generated == again.judged == 0 and backends.calls() == 0
        assert (cfg.outdir / "report.md").read_text() == report

    def test_judging_resumes_from_saved_answers(self, tmp_path, on_disk):
        cfg = RunConfig(corpus=on_disk / "corpus.jsonl", testset=on_disk / "testset.jsonl",
                        outdir=tmp_path / "out", settings=self.settings, generators=["gpt-4v"], judges=["gpt-4v"])
        run_experiment(cfg, phases=("generate",))
        backends = Backends.from_config(cfg)
        result = run_experiment(cfg, backends=backends, phases=("judge", "report"))
        assert result.generated == 0 and result.judged == 3
        # only judge calls were made, no embedding or retrieval work
        assert backends.text.calls == backends.mm.calls == 0

    def test_judge_phase_without_answers(self, tmp_path, on_disk):
        cfg = RunConfig(corpus=on_disk / "corpus.jsonl", testset=on_disk / "testset.jsonl",
                        outdir=tmp_path / "out", settings=["Baseline"], generators=["gpt-4v"], judges=["gpt-4v"])
        with pytest.raises(ConfigError, match="batch"):
            run_experiment(cfg, phases=("judge",))

    def test_inputs_are_read_only(self, tmp_path, on_disk):
        before = file_hashes(on_disk)
        cfg = RunConfig(corpus=on_disk / "corpus.jsonl", testset=on_disk / "testset.jsonl",
                        outdir=tmp_path / "out", settings=self.settings, generators=["gpt-4v"], judges=["gpt-4v"])
        run_experiment(cfg)
        assert file_hashes(on_disk) == before
        written = {p.relative_to(tmp_path).parts[0] for p in tmp_path.rglob("*") if p.is_file()}
        assert written == {"data", "out"}

    def test_generator_restricted_to_image_settings(self, tmp_path, synthetic):
        cfg = RunConfig(outdir=tmp_path / "out", settings=["TextOnlyRAG", "ImageOnlyClip"], judges=["gpt-4v"])
        result = run_experiment(cfg, corpus=synthetic.corpus, testset=synthetic.testset)
        assert ("TextOnlyRAG", "gpt-4v-si") not in result.answers
        assert ("ImageOnlyClip", "gpt-4v-si") in result.answers

    def test_missing_corpus_file(self, tmp_path):
        cfg = RunConfig(corpus=tmp_path / "nope.jsonl", testset=tmp_path / "t.jsonl", outdir=tmp_path / "o")
        with pytest.raises(ConfigError, match="not found"):
            run_experiment(cfg)

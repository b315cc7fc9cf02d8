"""Command-line driver: ``mmrag [global options] <command> ...``.

Exit codes: 0 on success, 1 on a fatal error, 2 on usage errors, 3 when the
share of judgment error rows exceeds the configured threshold.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import RunConfig, load_config
from .corpus import Corpus, load_corpus, load_testset, save_chunks, save_corpus, save_testset
from .errors import ConfigError, MMRagError
from .evaluation import Judgment, aggregate
from .pipeline import Backends, Templates, Workspace, answer_question, run_experiment
from .retrieval import Strategy
from .settings import SettingId, parse_setting
from .summaries import SummaryCache
from .synth import make_synthetic

EXIT_FATAL = 1
EXIT_THRESHOLD = 3

_STRATEGY_SETTING = {
    Strategy.TEXT_ONLY: SettingId.TEXT_ONLY_RAG,
    Strategy.IMAGE_CLIP: SettingId.IMAGE_ONLY_CLIP,
    Strategy.IMAGE_SUMMARY: SettingId.IMAGE_ONLY_SUMMARY,
    Strategy.MULTIMODAL_SEPARATE: SettingId.MULTIMODAL_CLIP,
    Strategy.MULTIMODAL_COMBINED: SettingId.MULTIMODAL_SUMMARY,
}


class Ctx:
    def __init__(self, config_path: str | None, seed: int | None, outdir: str | None, dry_run: bool) -> None:
        self.config_path = config_path
        self.overrides = {"seed": seed, "outdir": outdir}
        self.dry_run = dry_run

    def config(self, **more) -> RunConfig:
        cfg = load_config(self.config_path, **self.overrides, **more)
        cfg.check_files()
        return cfg


def _fail(exc: Exception, code: int = EXIT_FATAL) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _corpus(cfg: RunConfig) -> Corpus:
    if cfg.corpus is None:
        raise ConfigError("no corpus configured; pass --corpus or set 'corpus' in the config file")
    return load_corpus(cfg.corpus, cfg.chunk_config)


def _generator_name(cfg: RunConfig, name: str | None) -> str:
    names = [g.name for g in cfg.generators]
    if name is None:
        return names[0]
    if name not in names:
        raise click.BadParameter(f"{name!r} is not a configured generator ({', '.join(names)})",
                                 param_hint="--generator")
    return name


def _check_threshold(judgments: list[Judgment], threshold: float) -> int:
    if not judgments:
        return 0
    worst = 0.0
    for metric, frac in aggregate(judgments).error_fractions().items():
        if frac > threshold:
            click.echo(f"error rows for {metric.value}: {frac:.1%} exceeds threshold {threshold:.0%}", err=True)
        worst = max(worst, frac)
    return EXIT_THRESHOLD if worst > threshold else 0


def _setting(value: str) -> SettingId:
    try:
        return parse_setting(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--setting") from None


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run configuration.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override the configured seed.")
@click.option("--outdir", type=click.Path(file_okay=False), help="Override the output directory.")
@click.option("--dry-run", is_flag=True, help="Validate everything, make no model calls, write nothing.")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
@click.version_option(package_name="mmrag")
@click.pass_context
def main(ctx: click.Context, config_path, seed, outdir, dry_run, verbose) -> None:
    """Multimodal RAG experiments: ingest, index, answer, judge and report."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = Ctx(config_path, seed, outdir, dry_run)


@main.command()
@click.argument("corpus_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Default: <outdir>/corpus.")
@click.pass_obj
def ingest(obj: Ctx, corpus_file, out_dir) -> None:
    """Validate and chunk a corpus, writing the normalized pages and chunks."""
    try:
        cfg = obj.config()
        corpus = load_corpus(corpus_file, cfg.chunk_config)
        out = Path(out_dir) if out_dir else Path(cfg.outdir) / "corpus"
        click.echo(f"{len(corpus.pages)} pages, {len(corpus.chunks)} chunks, {len(corpus.images)} images")
        if obj.dry_run:
            return
        save_corpus(corpus, out / "corpus.jsonl")
        save_chunks(corpus.chunks, out / "chunks.jsonl")
        click.echo(f"wrote {out / 'corpus.jsonl'} and {out / 'chunks.jsonl'}")
    except MMRagError as exc:
        _fail(exc)


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--questions", default=20, show_default=True, type=click.IntRange(1))
@click.option("--hard", default=5, show_default=True, type=click.IntRange(0))
@click.pass_obj
def synth(obj: Ctx, out_dir, questions, hard) -> None:
    """Write a seeded synthetic corpus and test set for offline runs."""
    try:
        cfg = obj.config()
    except MMRagError as exc:
        _fail(exc)
    try:
        data = make_synthetic(questions, hard, seed=cfg.seed, chunking=cfg.chunk_config)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None
    out = Path(out_dir)
    click.echo(f"{len(data.corpus.pages)} pages, {len(data.testset)} questions ({len(data.hard_qids)} hard)")
    if obj.dry_run:
        return
    save_corpus(data.corpus, out / "corpus.jsonl")
    save_testset(data.testset, out / "testset.jsonl")
    click.echo(f"wrote {out / 'corpus.jsonl'} and {out / 'testset.jsonl'}")


@main.command()
@click.option("--corpus", "corpus_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", required=True, type=click.Choice([s.value for s in Strategy], case_sensitive=False))
@click.option("--generator", help="Summarizing model for summary strategies (default: first generator).")
@click.pass_obj
def index(obj: Ctx, corpus_file, strategy, generator) -> None:
    """Build and seal the indexes a retrieval strategy needs."""
    try:
        cfg = obj.config(corpus=corpus_file)
        strat = next(s for s in Strategy if s.value.lower() == strategy.lower())
        gen = _generator_name(cfg, generator)
        corpus = _corpus(cfg)
        backends = Backends.from_config(cfg)
        if obj.dry_run:
            click.echo(f"would build {strat.value} indexes over {len(corpus.chunks)} chunks and "
                       f"{len(corpus.images)} images")
            return
        templates = Templates.from_config(cfg)
        ws = Workspace(corpus, backends, cfg.hnsw_params, cfg.seed,
                       SummaryCache(Path(cfg.outdir) / "cache" / "summaries.jsonl"), templates.summary)
        ws.indexes_for(_STRATEGY_SETTING[strat], backends.generator(cfg, gen))
        for path in ws.save(Path(cfg.outdir) / "indexes"):
            click.echo(f"wrote {path}")
        click.echo(f"chat calls: {sum(c.calls for c in backends.chats.values())}")
    except MMRagError as exc:
        _fail(exc)


@main.command()
@click.option("--corpus", "corpus_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--generator", help="Summarizing model (default: first generator).")
@click.pass_obj
def summarize(obj: Ctx, corpus_file, generator) -> None:
    """Summarize every corpus image into the summary cache."""
    from .retrieval import summarize_corpus

    try:
        cfg = obj.config(corpus=corpus_file)
        gen = _generator_name(cfg, generator)
        corpus = _corpus(cfg)
        backends = Backends.from_config(cfg)
        if obj.dry_run:
            click.echo(f"would summarize {len(corpus.images)} images with {gen}")
            return
        cache = SummaryCache(Path(cfg.outdir) / "cache" / "summaries.jsonl")
        chat = backends.generator(cfg, gen).chat
        done = summarize_corpus(corpus, chat, cache, Templates.from_config(cfg).summary)
        click.echo(f"{len(done)} of {len(corpus.images)} images summarized; {chat.calls} chat calls")
    except MMRagError as exc:
        _fail(exc)


@main.command()
@click.argument("question")
@click.option("--setting", "setting_name", default=SettingId.MULTIMODAL_SUMMARY.value, show_default=True)
@click.option("--generator", help="Answering model (default: first generator).")
@click.option("--corpus", "corpus_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--testset", "testset_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--qid", help="Test-set question whose gold context a GSC setting uses.")
@click.pass_obj
def ask(obj: Ctx, question, setting_name, generator, corpus_file, testset_file, qid) -> None:
    """Answer one question and list the sources it was given."""
    from .corpus import QAQuadruple

    setting = _setting(setting_name)
    try:
        cfg = obj.config(corpus=corpus_file, testset=testset_file)
        gen_name = _generator_name(cfg, generator)
        q = QAQuadruple("ask", question, "-", "", None, ("", 1))
        if setting.gold_mode is not None:
            if qid is None or cfg.testset is None:
                raise click.UsageError("GSC settings need --testset and --qid to look up the gold context")
            by_id = {t.qid: t for t in load_testset(cfg.testset)}
            if qid not in by_id:
                raise click.BadParameter(f"no question {qid!r} in the test set", param_hint="--qid")
            q = by_id[qid]
            question = q.question
        corpus = _corpus(cfg) if setting.strategy is not None else Corpus()
        backends = Backends.from_config(cfg)
        if obj.dry_run:
            click.echo(f"would answer with {gen_name} under {setting.value}")
            return
        templates = Templates.from_config(cfg)
        generator_ = backends.generator(cfg, gen_name)
        indexes = None
        retrieval = None
        if setting.strategy is not None:
            ws = Workspace(corpus, backends, cfg.hnsw_params, cfg.seed,
                           SummaryCache(Path(cfg.outdir) / "cache" / "summaries.jsonl"), templates.summary)
            ws.load(Path(cfg.outdir) / "indexes")
            indexes = ws.indexes_for(setting, generator_)
            retrieval = cfg.retrieval_config(setting.strategy)
        answer = answer_question(setting, q, generator_, indexes=indexes, retrieval=retrieval,
                                 text_backend=backends.text, mm_backend=backends.mm,
                                 qa_template=templates.qa, char_budget=cfg.char_budget)
        if not answer.ok:
            raise MMRagError(answer.error)
        click.echo(answer.answer_text)
        sources = [(i.kind, i.source) for i in answer.text_context]
        sources += [("image", img.source) for img in answer.image_context]
        if sources:
            click.echo("\nSources:")
            for kind, (doc_id, page_no) in sources:
                click.echo(f"  - {doc_id}, page {page_no} ({kind})")
    except MMRagError as exc:
        _fail(exc)


def _experiment(obj: Ctx, phases: tuple[str, ...], corpus_file, testset_file, settings) -> None:
    try:
        more = {"corpus": corpus_file, "testset": testset_file}
        if settings:
            more["settings"] = [s.strip() for s in settings.split(",") if s.strip()]
        cfg = obj.config(**more)
        corpus = _corpus(cfg)
        if cfg.testset is None:
            raise ConfigError("no test set configured; pass --testset or set 'testset' in the config file")
        testset = load_testset(cfg.testset)
        backends = Backends.from_config(cfg)
        if obj.dry_run:
            click.echo(f"would run {', '.join(phases)} for {len(cfg.settings)} settings x "
                       f"{len(cfg.generators)} generators x {len(testset)} questions; "
                       f"judges: {', '.join(cfg.judges)}")
            return
        result = run_experiment(cfg, backends=backends, corpus=corpus, testset=testset, phases=phases)
    except MMRagError as exc:
        _fail(exc)
    failed = sum(1 for answers in result.answers.values() for a in answers if not a.ok)
    click.echo(f"{sum(len(a) for a in result.answers.values())} answers ({failed} failed), "
               f"{len(result.judgments)} judgments under {cfg.outdir}")
    if result.table is not None:
        click.echo(f"report: {Path(cfg.outdir) / 'report.md'}")
    code = _check_threshold(result.judgments, cfg.error_threshold)
    if code:
        sys.exit(code)


_corpus_opt = click.option("--corpus", "corpus_file", type=click.Path(exists=True, dir_okay=False))
_testset_opt = click.option("--testset", "testset_file", type=click.Path(exists=True, dir_okay=False))
_settings_opt = click.option("--settings", help="Comma-separated setting ids (default: all nine).")


@main.command()
@_corpus_opt
@_testset_opt
@_settings_opt
@click.pass_obj
def batch(obj: Ctx, corpus_file, testset_file, settings) -> None:
    """Generation phase: answer the test set under each setting and generator."""
    _experiment(obj, ("generate",), corpus_file, testset_file, settings)


@main.command(name="eval")
@_corpus_opt
@_testset_opt
@_settings_opt
@click.pass_obj
def eval_(obj: Ctx, corpus_file, testset_file, settings) -> None:
    """Judging phase: grade persisted answers with every judge."""
    _experiment(obj, ("judge",), corpus_file, testset_file, settings)


@main.command()
@_corpus_opt
@_testset_opt
@_settings_opt
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv", "json"]), default="markdown",
              show_default=True, help="Also print the overall report in this format.")
@click.pass_obj
def report(obj: Ctx, corpus_file, testset_file, settings, fmt) -> None:
    """Aggregate persisted judgments into per-cell and overall reports."""
    _experiment(obj, ("report",), corpus_file, testset_file, settings)
    if not obj.dry_run:
        cfg = obj.config()
        ext = {"markdown": "md", "csv": "csv", "json": "json"}[fmt]
        click.echo((Path(cfg.outdir) / f"report.{ext}").read_text(encoding="utf-8"), nl=False)


@main.command()
@_corpus_opt
@_testset_opt
@_settings_opt
@click.pass_obj
def run(obj: Ctx, corpus_file, testset_file, settings) -> None:
    """All phases in one go: generate, judge and report."""
    _experiment(obj, ("generate", "judge", "report"), corpus_file, testset_file, settings)


if __name__ == "__main__":  # pragma: no cover
    main()

"""Running the nine settings end to end: retrieve, generate, judge, report.

Generation and judging are separate phases. Each (setting, generator) cell
writes its answers before any judging starts, so a run interrupted during
judging resumes from the persisted answers instead of regenerating them.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backends import ChatModel, MultimodalEmbedder, TextEmbedder, make_backend
from .config import RunConfig
from .corpus import Corpus, ImageAsset, QAQuadruple, load_corpus, load_testset, read_jsonl, write_jsonl
from .errors import ConfigError, JudgeParseError, MMRagError
from .evaluation import (
    JudgeTemplates,
    Judgment,
    Metric,
    ScoreTable,
    aggregate,
    evaluate,
    metrics_for,
    render_report,
)
from .evaluation.metrics import GA, IMAGE_CTX, Q, RA, TEXT_CTX
from .generation import (
    ImageMode,
    RagAnswer,
    baseline_prompt,
    build_qa_prompt,
    default_qa_template,
    format_text_item,
    select_context,
    synthesize_answer,
)
from .prompts import PromptTemplate, load_template
from .retrieval import (
    ContextBundle,
    IndexSet,
    RetrievalConfig,
    Strategy,
    build_clip_image_index,
    build_combined_index,
    build_summary_image_index,
    build_text_index,
    gold_context,
    retrieve,
)
from .settings import SettingId
from .summaries import SummaryCache, default_summary_template
from .vectorstore import HnswParams
from .vectorstore import load as load_index
from .vectorstore import save as save_index

log = logging.getLogger(__name__)

REPORT_FORMATS = {"md": "markdown", "csv": "csv", "json": "json"}


@dataclass(frozen=True)
class Generator:
    """A chat backend used for answer synthesis.

    Backends that accept one image per prompt run in single-image mode; the
    others get every retrieved image up to their limit.
    """

    name: str
    chat: ChatModel
    mode: ImageMode | None = None  # pinned mode, e.g. single-image runs of a multi-image model

    def __post_init__(self) -> None:
        if self.mode is ImageMode.MULTI and self.chat.max_images < 2:
            raise ConfigError(f"generator {self.name!r}: {self.chat.profile.name} accepts a single image only")

    @property
    def image_mode(self) -> ImageMode:
        if self.mode is not None:
            return self.mode
        return ImageMode.MULTI if self.chat.max_images > 1 else ImageMode.SINGLE

    @property
    def max_images(self) -> int:
        return 1 if self.image_mode is ImageMode.SINGLE else self.chat.max_images


@dataclass
class Backends:
    text: TextEmbedder
    mm: MultimodalEmbedder
    chats: dict[str, ChatModel]

    @classmethod
    def from_config(cls, config: RunConfig) -> "Backends":
        """Instantiate every configured backend.

        HTTP clients read their API key here, so a missing key surfaces as a
        ConfigError before any request is made.
        """
        seed = config.seed
        chats = {}
        for name in dict.fromkeys([g.backend for g in config.generators] + config.judges):
            chats[name] = make_backend(config.profile(name), seed=seed)
        return cls(
            make_backend(config.profile(config.text_embed), seed=seed),
            make_backend(config.profile(config.multimodal_embed), seed=seed),
            chats,
        )

    def generator(self, config: RunConfig, name: str) -> Generator:
        spec = config.generator_spec(name)
        mode = ImageMode(spec.image_mode) if spec.image_mode else None
        return Generator(spec.name, self.chats[spec.backend], mode)

    def calls(self) -> int:
        return self.text.calls + self.mm.calls + sum(c.calls for c in self.chats.values())


@dataclass(frozen=True)
class Templates:
    qa: PromptTemplate
    summary: PromptTemplate
    judges: JudgeTemplates

    @classmethod
    def from_config(cls, config: RunConfig) -> "Templates":
        t = config.templates
        qa = load_template("qa", {"question", "text_context"}, t.qa) if t.qa else default_qa_template()
        summary = load_template("image_summary", set(), t.image_summary) if t.image_summary else default_summary_template()
        return cls(qa, summary, JudgeTemplates(t.judge_dir))


class Workspace:
    """Builds each index at most once per run.

    Text and CLIP indexes are shared by all generators. Summary-based indexes
    are built per chat backend because the summarizing model must be the one
    that later answers.
    """

    def __init__(self, corpus: Corpus, backends: Backends, params: HnswParams | None = None, seed: int = 0,
                 summary_cache: SummaryCache | None = None, summary_template: PromptTemplate | None = None) -> None:
        self.corpus = corpus
        self.backends = backends
        self.params = params
        self.seed = seed
        self.cache = summary_cache if summary_cache is not None else SummaryCache()
        self.summary_template = summary_template
        self._text = None
        self._clip = None
        self._summary: dict[str, object] = {}
        self._combined: dict[str, object] = {}

    def text(self):
        if self._text is None:
            self._text = build_text_index(self.corpus, self.backends.text, self.params, self.seed)
        return self._text

    def clip(self):
        if self._clip is None:
            self._clip = build_clip_image_index(self.corpus, self.backends.mm, self.params, self.seed)
        return self._clip

    def summary(self, generator: Generator):
        key = generator.chat.profile.name
        if key not in self._summary:
            self._summary[key] = build_summary_image_index(
                self.corpus, generator.chat, self.backends.text, self.params, self.seed, self.cache,
                self.summary_template)
        return self._summary[key]

    def combined(self, generator: Generator):
        key = generator.chat.profile.name
        if key not in self._combined:
            self._combined[key] = build_combined_index(
                self.corpus, generator.chat, self.backends.text, self.params, self.seed, self.cache,
                self.summary_template)
        return self._combined[key]

    def _files(self, directory: Path) -> list[tuple[Path, str, str | None]]:
        names = [(directory / "text.hnsw", "_text", None), (directory / "clip.hnsw", "_clip", None)]
        for gen in self.backends.chats:
            safe = _safe(gen)
            names += [(directory / f"summary-{safe}.hnsw", "_summary", gen),
                      (directory / f"combined-{safe}.hnsw", "_combined", gen)]
        return names

    def save(self, directory: str | Path) -> list[Path]:
        """Persist every index built so far; returns the files written."""
        written = []
        for path, attr, gen in self._files(Path(directory)):
            built = getattr(self, attr) if gen is None else getattr(self, attr).get(gen)
            if built is not None:
                save_index(built[0], built[1], path)
                written.append(path)
        return written

    def load(self, directory: str | Path) -> list[Path]:
        """Adopt indexes previously saved under ``directory``."""
        loaded = []
        for path, attr, gen in self._files(Path(directory)):
            if not path.exists():
                continue
            built = load_index(path)
            if gen is None:
                setattr(self, attr, built)
            else:
                getattr(self, attr)[gen] = built
            loaded.append(path)
        return loaded

    def indexes_for(self, setting: SettingId, generator: Generator) -> IndexSet:
        s = setting.strategy
        if s is None:
            return IndexSet()
        return IndexSet(
            text=self.text() if s in (Strategy.TEXT_ONLY, Strategy.MULTIMODAL_SEPARATE) else None,
            clip=self.clip() if s in (Strategy.IMAGE_CLIP, Strategy.MULTIMODAL_SEPARATE) else None,
            summary=self.summary(generator) if s is Strategy.IMAGE_SUMMARY else None,
            combined=self.combined(generator) if s is Strategy.MULTIMODAL_COMBINED else None,
        )


# ---------------------------------------------------------------------------
# generation phase


def _check_ready(setting: SettingId, retrieval: RetrievalConfig | None, indexes: IndexSet | None) -> None:
    s = setting.strategy
    if s is None:
        return
    if retrieval is None or retrieval.strategy is not s:
        raise ConfigError(f"setting {setting.value} needs a {s.value} retrieval config")
    needed = {
        Strategy.TEXT_ONLY: ("text",),
        Strategy.IMAGE_CLIP: ("clip",),
        Strategy.IMAGE_SUMMARY: ("summary",),
        Strategy.MULTIMODAL_SEPARATE: ("text", "clip"),
        Strategy.MULTIMODAL_COMBINED: ("combined",),
    }[s]
    for name in needed:
        if indexes is None or getattr(indexes, name) is None:
            raise ConfigError(f"setting {setting.value} needs the {name} index, which was not built")
        if not getattr(indexes, name)[0].sealed:
            raise ConfigError(f"setting {setting.value}: the {name} index is not sealed")


def answer_question(setting: SettingId, q: QAQuadruple, generator: Generator, *,
                    indexes: IndexSet | None = None, retrieval: RetrievalConfig | None = None,
                    text_backend: TextEmbedder | None = None, mm_backend: MultimodalEmbedder | None = None,
                    qa_template: PromptTemplate | None = None, char_budget: int = 12_000) -> RagAnswer:
    """Produce one answer; backend failures become an answer with ``error`` set."""
    bundle = ContextBundle(q.question)
    try:
        if setting is SettingId.BASELINE:
            messages = baseline_prompt(q.question)
            texts_sent = 0
        else:
            if setting.gold_mode is not None:
                bundle = gold_context(q, setting.gold_mode)
            else:
                bundle = retrieve(retrieval, q.question, indexes, text_backend, mm_backend)
            template = qa_template or default_qa_template()
            ctx = select_context(bundle, generator.image_mode, generator.max_images, char_budget)
            messages = build_qa_prompt(template, q.question, bundle, generator.image_mode,
                                       generator.max_images, char_budget)
            texts_sent = len(ctx.texts)
        text, images_sent = synthesize_answer(generator.chat, messages)
        return RagAnswer(q.qid, setting.value, generator.name, text, bundle, images_sent, texts_sent)
    except ConfigError:
        raise
    except MMRagError as exc:
        log.warning("question %s failed in %s/%s: %s", q.qid, setting.value, generator.name, exc)
        return RagAnswer(q.qid, setting.value, generator.name, "", bundle, 0, 0, f"{type(exc).__name__}: {exc}")


def run_setting(setting: SettingId, testset: Sequence[QAQuadruple], generator: Generator, *,
                indexes: IndexSet | None = None, retrieval: RetrievalConfig | None = None,
                text_backend: TextEmbedder | None = None, mm_backend: MultimodalEmbedder | None = None,
                qa_template: PromptTemplate | None = None, char_budget: int = 12_000,
                timeout_s: float = 120.0, workers: int = 4) -> list[RagAnswer]:
    """Answer every question of ``testset`` under ``setting``.

    Returns one answer per question in test-set order. A question that fails
    or exceeds ``timeout_s`` yields an answer with ``error`` set; only
    configuration problems abort the batch.
    """
    _check_ready(setting, retrieval, indexes)

    def one(q: QAQuadruple) -> RagAnswer:
        return answer_question(setting, q, generator, indexes=indexes, retrieval=retrieval,
                               text_backend=text_backend, mm_backend=mm_backend,
                               qa_template=qa_template, char_budget=char_budget)

    pool = ThreadPoolExecutor(max_workers=max(1, workers))
    try:
        futures = [(q, pool.submit(one, q)) for q in testset]
        out = []
        for q, fut in futures:
            try:
                out.append(fut.result(timeout=timeout_s))
            except FutureTimeout:
                log.warning("question %s timed out after %.0f s", q.qid, timeout_s)
                out.append(RagAnswer(q.qid, setting.value, generator.name, "", ContextBundle(q.question),
                                     error=f"timeout after {timeout_s:g} s"))
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
    return out


# ---------------------------------------------------------------------------
# judging phase


def judge_inputs(metric: Metric, answer: RagAnswer, q: QAQuadruple) -> dict | None:
    """Inputs for ``metric``, or None when the answer had no context of that modality."""
    values: dict = {}
    for name in metric.required_inputs:
        if name == Q:
            values[name] = q.question
        elif name == GA:
            values[name] = answer.answer_text
        elif name == RA:
            values[name] = q.reference_answer
        elif name == TEXT_CTX:
            texts = answer.text_context
            if not texts:
                return None
            values[name] = "\n\n".join(format_text_item(i) for i in texts)
        elif name == IMAGE_CTX:
            images = answer.image_context
            if not images:
                return None
            values[name] = images
    return values


def judge_answers(answers: Sequence[RagAnswer], testset: Sequence[QAQuadruple], judges: dict[str, ChatModel],
                  templates: JudgeTemplates | None = None, workers: int = 4) -> list[Judgment]:
    """Grade every answer on every metric its setting has, with every judge.

    Failed generations and unparseable judge output become error rows.
    Context metrics are skipped for answers that saw no context of that
    modality. The log comes back ordered by (qid, judge, metric).
    """
    by_qid = {q.qid: q for q in testset}
    tasks = []
    for a in answers:
        setting = SettingId(a.setting)
        for judge_name in sorted(judges):
            for metric in metrics_for(setting):
                tasks.append((a, judge_name, metric))

    def one(task) -> Judgment | None:
        a, judge_name, metric = task
        base = dict(qid=a.qid, setting=a.setting, generator=a.generator, judge=judge_name, metric=metric)
        if not a.ok:
            return Judgment(**base, grade=None, reason="no answer to judge", error=f"generation failed: {a.error}")
        inputs = judge_inputs(metric, a, by_qid[a.qid])
        if inputs is None:
            return None
        try:
            return evaluate(judges[judge_name], metric, inputs, templates=templates,
                            qid=a.qid, setting=a.setting, generator=a.generator)
        except (JudgeParseError, MMRagError) as exc:
            if isinstance(exc, ConfigError):
                raise
            return Judgment(**base, grade=None, reason="judge failed", error=f"{type(exc).__name__}: {exc}")

    if workers <= 1:
        results = [one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, tasks))
    order = {q.qid: i for i, q in enumerate(testset)}
    out = [j for j in results if j is not None]
    out.sort(key=lambda j: (order.get(j.qid, len(order)), j.qid, j.setting, j.generator, j.judge,
                            list(Metric).index(j.metric)))
    return out


# ---------------------------------------------------------------------------
# experiment


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def cell_dir(outdir: Path, setting: str, generator: str) -> Path:
    return Path(outdir) / setting / _safe(generator)


def write_reports(table: ScoreTable, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for ext, fmt in REPORT_FORMATS.items():
        path = directory / f"report.{ext}"
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(render_report(table, fmt), encoding="utf-8")
        tmp.replace(path)


def image_resolver(corpus: Corpus, testset: Iterable[QAQuadruple]):
    """Callback that maps a logged image reference back to its ImageAsset."""
    by_key = corpus.image_by_key()
    gold = {f"gold:{q.qid}:image": q.gold_image for q in testset if q.gold_image is not None}

    def resolve(ref: str, key: str) -> ImageAsset:
        if ref in gold:
            return gold[ref]
        try:
            return by_key[key]
        except KeyError:
            raise MMRagError(f"logged image {key} is not in the corpus") from None

    return resolve


def load_answers(path: Path, corpus: Corpus, testset: Sequence[QAQuadruple]) -> list[RagAnswer]:
    resolve = image_resolver(corpus, testset)
    return [RagAnswer.from_json(row, resolve) for row in read_jsonl(path)]


def load_judgments(path: Path) -> list[Judgment]:
    return [Judgment.from_json(row) for row in read_jsonl(path)]


@dataclass
class ExperimentResult:
    table: ScoreTable | None = None
    answers: dict[tuple[str, str], list[RagAnswer]] = field(default_factory=dict)
    judgments: list[Judgment] = field(default_factory=list)
    generated: int = 0  # cells whose answers were produced in this run
    judged: int = 0  # cells whose judgments were produced in this run


PHASES = ("generate", "judge", "report")


def run_experiment(config: RunConfig, *, backends: Backends | None = None, corpus: Corpus | None = None,
                   testset: Sequence[QAQuadruple] | None = None, phases: Sequence[str] = PHASES,
                   resume: bool = True) -> ExperimentResult:
    """Run the configured settings for every generator and persist the results.

    Layout under ``config.outdir``: ``{setting}/{generator}/answers.jsonl``,
    ``judgments.jsonl`` and ``report.{md,csv,json}`` per cell, plus an overall
    ``report.*``. With ``resume``, complete answer and judgment logs already
    on disk are reused. ``table`` is only filled when the report phase runs.
    """
    unknown = set(phases) - set(PHASES)
    if unknown:
        raise ConfigError(f"unknown phases {sorted(unknown)}; expected a subset of {PHASES}")
    config.check_files()
    if corpus is None:
        if config.corpus is None:
            raise ConfigError("no corpus given")
        corpus = load_corpus(config.corpus, config.chunk_config)
    if testset is None:
        if config.testset is None:
            raise ConfigError("no test set given")
        testset = load_testset(config.testset)
    if not testset:
        raise ConfigError("the test set is empty")
    backends = backends or Backends.from_config(config)
    templates = Templates.from_config(config)
    outdir = Path(config.outdir)
    workspace = Workspace(corpus, backends, config.hnsw_params, config.seed,
                          SummaryCache(outdir / "cache" / "summaries.jsonl"), templates.summary)
    qids = [q.qid for q in testset]
    judges = {name: backends.chats[name] for name in config.judges}

    result = ExperimentResult()
    all_judgments: list[Judgment] = []
    for setting in config.setting_ids:
        for spec in config.generators:
            if not spec.runs(setting):
                continue
            gen_name = spec.name
            generator = backends.generator(config, gen_name)
            cdir = cell_dir(outdir, setting.value, gen_name)
            answers_path, judgments_path = cdir / "answers.jsonl", cdir / "judgments.jsonl"

            answers = None
            if resume and answers_path.exists():
                loaded = load_answers(answers_path, corpus, testset)
                if [a.qid for a in loaded] == qids:
                    answers = loaded
            fresh_answers = answers is None
            if answers is None:
                if "generate" not in phases:
                    raise ConfigError(f"no complete answers for {setting.value}/{gen_name}; run the batch phase first")
                retrieval = config.retrieval_config(setting.strategy) if setting.strategy else None
                answers = run_setting(
                    setting, testset, generator,
                    indexes=workspace.indexes_for(setting, generator), retrieval=retrieval,
                    text_backend=backends.text, mm_backend=backends.mm, qa_template=templates.qa,
                    char_budget=config.char_budget, timeout_s=config.question_timeout_s,
                    workers=config.concurrency)
                write_jsonl(answers_path, (a.to_json() for a in answers))
                result.generated += 1
            result.answers[(setting.value, gen_name)] = answers

            if "judge" not in phases and "report" not in phases:
                continue
            judgments = None
            if resume and not fresh_answers and judgments_path.exists():
                loaded_j = load_judgments(judgments_path)
                if {j.judge for j in loaded_j} == set(judges):
                    judgments = loaded_j
            if judgments is None:
                if "judge" not in phases:
                    raise ConfigError(f"no judgments for {setting.value}/{gen_name}; run the eval phase first")
                judgments = judge_answers(answers, testset, judges, templates.judges, config.concurrency)
                write_jsonl(judgments_path, (j.to_json() for j in judgments))
                result.judged += 1
            all_judgments.extend(judgments)
            if "report" in phases and judgments:
                write_reports(aggregate(judgments), cdir)

    result.judgments = all_judgments
    if "report" in phases:
        result.table = aggregate(all_judgments)
        write_reports(result.table, outdir)
    return result

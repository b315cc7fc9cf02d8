"""Index construction and the retrieval strategies.

Five strategies share a fixed retrieval budget (``k_total``, default 4):

* ``TEXT_ONLY`` - text chunks embedded with the text model.
* ``IMAGE_CLIP`` - images and question embedded in one multimodal space.
* ``IMAGE_SUMMARY`` - image summaries embedded as text; hits resolve to the
  original image through the document store.
* ``MULTIMODAL_SEPARATE`` - a text store and a multimodal image store, searched
  separately with ``k_text`` and ``k_image`` so both modalities always appear.
* ``MULTIMODAL_COMBINED`` - text chunks and image summaries in one store; the
  text/image split of the top ``k_total`` depends on the query.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

from .backends import ChatModel, MultimodalEmbedder, TextEmbedder
from .corpus import Corpus, ImageAsset, QAQuadruple, Source, TextChunk
from .errors import BackendError, ConfigError, MMRagError
from .prompts import PromptTemplate
from .summaries import SummaryCache, summarize_image
from .vectorstore import DocStore, HnswIndex, HnswParams

log = logging.getLogger(__name__)

EMBED_BATCH = 64

Built = tuple[HnswIndex, DocStore]


class Strategy(str, enum.Enum):
    TEXT_ONLY = "TextOnly"
    IMAGE_CLIP = "ImageClip"
    IMAGE_SUMMARY = "ImageSummary"
    MULTIMODAL_SEPARATE = "MultimodalSeparate"
    MULTIMODAL_COMBINED = "MultimodalCombined"


class GoldMode(str, enum.Enum):
    TEXT = "TextGSC"
    IMAGE = "ImageGSC"
    MULTIMODAL = "MultimodalGSC"


@dataclass(frozen=True)
class RetrievalConfig:
    strategy: Strategy
    k_total: int = 4
    k_text: int = 2
    k_image: int = 2

    def __post_init__(self) -> None:
        if self.k_total < 1 or self.k_text < 0 or self.k_image < 0:
            raise ValueError("k_total must be >= 1 and k_text, k_image >= 0")
        if self.k_text > self.k_total or self.k_image > self.k_total:
            raise ValueError("per-modality k cannot exceed k_total")
        if self.strategy is Strategy.MULTIMODAL_SEPARATE and self.k_text + self.k_image != self.k_total:
            raise ValueError("separate stores need k_text + k_image == k_total")


@dataclass(frozen=True)
class ContextItem:
    kind: Literal["text", "image"]
    payload: Union[str, ImageAsset]
    source: Source
    score: float
    ref: str
    summary: str | None = None  # set when an image was found through its summary

    @property
    def via(self) -> str:
        return "summary" if self.summary is not None else "direct"


@dataclass(frozen=True)
class ContextBundle:
    question: str
    items: tuple[ContextItem, ...] = ()

    @property
    def texts(self) -> list[ContextItem]:
        return [i for i in self.items if i.kind == "text"]

    @property
    def images(self) -> list[ContextItem]:
        return [i for i in self.items if i.kind == "image"]


@dataclass
class IndexSet:
    """The sealed indexes a run can draw on; any of them may be absent."""

    text: Built | None = None
    clip: Built | None = None
    summary: Built | None = None
    combined: Built | None = None

    def searches(self) -> int:
        return sum(b[0].searches for b in (self.text, self.clip, self.summary, self.combined) if b is not None)


# ---------------------------------------------------------------------------
# building


def _parallel(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _embed_all(backend: TextEmbedder, texts: list[str]) -> list[np.ndarray]:
    batches = [texts[i : i + EMBED_BATCH] for i in range(0, len(texts), EMBED_BATCH)]
    out: list[np.ndarray] = []
    for vecs in _parallel(backend.embed_texts, batches, backend.profile.max_concurrency):
        out.extend(vecs)
    return out


def _fill(ids: list[str], vectors: list[np.ndarray], params: HnswParams | None, seed: int, dim: int) -> HnswIndex:
    index = HnswIndex(vectors[0].shape[0] if vectors else dim, params, seed=seed)
    for id, v in zip(ids, vectors):
        index.insert(id, v)
    return index.seal()


def build_text_index(corpus: Corpus, text_backend: TextEmbedder, params: HnswParams | None = None,
                     seed: int = 0) -> Built:
    if not corpus.chunks:
        raise MMRagError("cannot build a text index: corpus has no text chunks")
    docs = DocStore()
    for chunk in corpus.chunks:
        docs.put(chunk.chunk_id, chunk)
    vectors = _embed_all(text_backend, [c.text for c in corpus.chunks])
    return _fill([c.chunk_id for c in corpus.chunks], vectors, params, seed, text_backend.profile.dim), docs


def build_clip_image_index(corpus: Corpus, mm_backend: MultimodalEmbedder, params: HnswParams | None = None,
                           seed: int = 0) -> Built:
    docs = DocStore()
    for image in corpus.images:
        docs.put(image.key, image)
    vectors = _parallel(mm_backend.embed_image, list(corpus.images), mm_backend.profile.max_concurrency)
    return _fill([img.key for img in corpus.images], vectors, params, seed, mm_backend.profile.dim), docs


def summary_id(image: ImageAsset) -> str:
    return f"summary:{image.key}"


def summarize_corpus(corpus: Corpus, chat: ChatModel, cache: SummaryCache | None = None,
                     template: PromptTemplate | None = None) -> dict[str, str]:
    """Summarize every distinct image once. Returns image key -> summary.

    Images whose summarization fails are logged and left out; if every image
    fails the whole call fails.
    """
    cache = cache if cache is not None else SummaryCache()
    unique: dict[str, ImageAsset] = {}
    for image in corpus.images:
        unique.setdefault(image.sha256, image)

    def one(image: ImageAsset) -> str | None:
        try:
            return summarize_image(chat, image, template, cache)
        except BackendError as exc:
            log.warning("skipping image %s: summarization failed: %s", image.key, exc)
            return None

    shas = list(unique)
    results = dict(zip(shas, _parallel(one, [unique[s] for s in shas], chat.profile.max_concurrency)))
    out = {img.key: results[img.sha256] for img in corpus.images if results[img.sha256] is not None}
    if corpus.images and not out:
        raise BackendError(f"summarization failed for all {len(corpus.images)} images")
    return out


def build_summary_image_index(corpus: Corpus, chat: ChatModel, text_backend: TextEmbedder,
                              params: HnswParams | None = None, seed: int = 0,
                              cache: SummaryCache | None = None,
                              template: PromptTemplate | None = None) -> Built:
    summaries = summarize_corpus(corpus, chat, cache, template)
    docs = DocStore()
    ids, texts = [], []
    for image in corpus.images:
        if image.key not in summaries:
            continue
        sid = summary_id(image)
        docs.put(sid, image, surrogate=summaries[image.key])
        ids.append(sid)
        texts.append(summaries[image.key])
    vectors = _embed_all(text_backend, texts) if texts else []
    return _fill(ids, vectors, params, seed, text_backend.profile.dim), docs


def build_combined_index(corpus: Corpus, chat: ChatModel, text_backend: TextEmbedder,
                         params: HnswParams | None = None, seed: int = 0,
                         cache: SummaryCache | None = None,
                         template: PromptTemplate | None = None) -> Built:
    """One store holding text chunks and image summaries, all in text space."""
    summaries = summarize_corpus(corpus, chat, cache, template) if corpus.images else {}
    docs = DocStore()
    ids, texts = [], []
    for chunk in corpus.chunks:
        docs.put(chunk.chunk_id, chunk)
        ids.append(chunk.chunk_id)
        texts.append(chunk.text)
    for image in corpus.images:
        if image.key in summaries:
            sid = summary_id(image)
            docs.put(sid, image, surrogate=summaries[image.key])
            ids.append(sid)
            texts.append(summaries[image.key])
    if not ids:
        raise MMRagError("cannot build a combined index: corpus has neither text nor images")
    return _fill(ids, _embed_all(text_backend, texts), params, seed, text_backend.profile.dim), docs


# ---------------------------------------------------------------------------
# querying


def _items(built: Built, query: np.ndarray, k: int) -> list[ContextItem]:
    index, docs = built
    out = []
    for hit in index.search(query, k):
        payload = docs.get(hit.id)
        if isinstance(payload, TextChunk):
            out.append(ContextItem("text", payload.text, payload.source, hit.distance, hit.id))
        else:
            out.append(ContextItem("image", payload, payload.source, hit.distance, hit.id, docs.surrogate(hit.id)))
    return out


def _need(built: Built | None, name: str, strategy: Strategy) -> Built:
    if built is None:
        raise ConfigError(f"strategy {strategy.value} needs the {name} index, which was not built")
    return built


def _ordered(items: list[ContextItem]) -> tuple[ContextItem, ...]:
    texts = sorted((i for i in items if i.kind == "text"), key=lambda i: (i.score, i.ref))
    images = sorted((i for i in items if i.kind == "image"), key=lambda i: (i.score, i.ref))
    return tuple(texts + images)


def retrieve(cfg: RetrievalConfig, question: str, indexes: IndexSet,
             text_backend: TextEmbedder | None = None,
             mm_backend: MultimodalEmbedder | None = None) -> ContextBundle:
    s = cfg.strategy
    text_needed = s in (Strategy.TEXT_ONLY, Strategy.IMAGE_SUMMARY, Strategy.MULTIMODAL_SEPARATE,
                        Strategy.MULTIMODAL_COMBINED)
    mm_needed = s in (Strategy.IMAGE_CLIP, Strategy.MULTIMODAL_SEPARATE)
    if text_needed and text_backend is None:
        raise ConfigError(f"strategy {s.value} needs a text embedding backend")
    if mm_needed and mm_backend is None:
        raise ConfigError(f"strategy {s.value} needs a multimodal embedding backend")

    # check every required index before spending any embedding calls
    if s is Strategy.TEXT_ONLY:
        built = [(_need(indexes.text, "text", s), "text", cfg.k_total)]
    elif s is Strategy.IMAGE_CLIP:
        built = [(_need(indexes.clip, "clip", s), "mm", cfg.k_total)]
    elif s is Strategy.IMAGE_SUMMARY:
        built = [(_need(indexes.summary, "summary", s), "text", cfg.k_total)]
    elif s is Strategy.MULTIMODAL_SEPARATE:
        built = [(_need(indexes.text, "text", s), "text", cfg.k_text),
                 (_need(indexes.clip, "clip", s), "mm", cfg.k_image)]
    else:
        built = [(_need(indexes.combined, "combined", s), "text", cfg.k_total)]

    queries: dict[str, np.ndarray] = {}
    if text_needed:
        queries["text"] = text_backend.embed_texts([question])[0]
    if mm_needed:
        queries["mm"] = mm_backend.embed_query(question)
    items: list[ContextItem] = []
    for b, space, k in built:
        if k > 0:
            items.extend(_items(b, queries[space], k))
    return ContextBundle(question, _ordered(items))


def gold_context(q: QAQuadruple, mode: GoldMode) -> ContextBundle:
    """Bundle holding exactly the annotated context of ``q``; no index is touched."""
    items: list[ContextItem] = []
    if mode in (GoldMode.TEXT, GoldMode.MULTIMODAL):
        if not q.gold_text.strip():
            raise MMRagError(f"question {q.qid}: {mode.value} needs gold text context")
        items.append(ContextItem("text", q.gold_text, q.source_page, 0.0, f"gold:{q.qid}:text"))
    if mode in (GoldMode.IMAGE, GoldMode.MULTIMODAL):
        if q.gold_image is None:
            raise MMRagError(f"question {q.qid}: {mode.value} needs a gold image")
        items.append(ContextItem("image", q.gold_image, q.source_page, 0.0, f"gold:{q.qid}:image"))
    return ContextBundle(q.question, tuple(items))

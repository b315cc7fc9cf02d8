"""QA prompt assembly and answer synthesis."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable

from .backends import ChatMessage, ChatModel
from .corpus import ImageAsset
from .errors import EmptyCompletion
from .prompts import PromptTemplate, load_template
from .retrieval import ContextBundle, ContextItem
from .summaries import summarize_image  # noqa: F401  (re-export)

QA_PLACEHOLDERS = frozenset({"question", "text_context"})
DEFAULT_CHAR_BUDGET = 12_000
EMPTY_COMPLETION_ATTEMPTS = 2


class ImageMode(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


def default_qa_template() -> PromptTemplate:
    return load_template("qa", QA_PLACEHOLDERS)


def format_text_item(item: ContextItem) -> str:
    doc_id, page_no = item.source
    return f"[source: {doc_id}, page {page_no}]\n{item.payload}"


@dataclass(frozen=True)
class PromptContext:
    """The subset of a bundle that actually goes into the prompt."""

    texts: tuple[ContextItem, ...]
    images: tuple[ContextItem, ...]


def select_context(bundle: ContextBundle, image_mode: ImageMode, max_images: int,
                   char_budget: int = DEFAULT_CHAR_BUDGET) -> PromptContext:
    """Pick text and image items for a prompt.

    Text items are kept nearest-first while their rendered size fits the
    character budget; an item that does not fit is dropped whole. Single image
    mode keeps only the nearest image, multi mode up to ``max_images``.
    """
    texts = sorted(bundle.texts, key=lambda i: (i.score, i.ref))
    kept: list[ContextItem] = []
    used = 0
    for item in texts:
        size = len(format_text_item(item)) + (2 if kept else 0)
        if used + size > char_budget:
            break
        kept.append(item)
        used += size
    images = sorted(bundle.images, key=lambda i: (i.score, i.ref))
    limit = 1 if image_mode is ImageMode.SINGLE else max_images
    return PromptContext(tuple(kept), tuple(images[:limit]))


def build_qa_prompt(template: PromptTemplate, question: str, bundle: ContextBundle,
                    image_mode: ImageMode = ImageMode.MULTI, max_images: int = 1,
                    char_budget: int = DEFAULT_CHAR_BUDGET) -> list[ChatMessage]:
    ctx = select_context(bundle, image_mode, max_images, char_budget)
    text_context = "\n\n".join(format_text_item(i) for i in ctx.texts)
    user = template.render(question=question, text_context=text_context)
    images = [i.payload for i in ctx.images]
    return [ChatMessage.system(template.system_text), ChatMessage.user(user, *images)]


def baseline_prompt(question: str) -> list[ChatMessage]:
    """No retrieval: the question alone."""
    return [ChatMessage.user(question)]


def synthesize_answer(chat: ChatModel, messages: list[ChatMessage]) -> tuple[str, int]:
    """Return (answer_text, images_sent); an empty completion is retried once."""
    images_sent = sum(len(m.images) for m in messages)
    for attempt in range(EMPTY_COMPLETION_ATTEMPTS):
        try:
            return chat.complete(messages).strip(), images_sent
        except EmptyCompletion:
            if attempt == EMPTY_COMPLETION_ATTEMPTS - 1:
                raise
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# answers and their serialized form


@dataclass(frozen=True)
class RagAnswer:
    qid: str
    setting: str
    generator: str
    answer_text: str
    bundle: ContextBundle
    images_sent: int = 0
    texts_sent: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def text_context(self) -> list[ContextItem]:
        """Text items the generator actually saw (nearest first)."""
        return sorted(self.bundle.texts, key=lambda i: (i.score, i.ref))[: self.texts_sent]

    @property
    def image_context(self) -> list[ImageAsset]:
        """Images the generator actually saw (nearest first)."""
        items = sorted(self.bundle.images, key=lambda i: (i.score, i.ref))[: self.images_sent]
        return [i.payload for i in items]

    def to_json(self) -> dict[str, Any]:
        items = []
        for it in self.bundle.items:
            row: dict[str, Any] = {"kind": it.kind, "ref": it.ref, "doc_id": it.source[0],
                                   "page_no": it.source[1], "score": it.score}
            if it.kind == "text":
                row["text"] = it.payload
            else:
                row["image_key"] = it.payload.key
                row["sha256"] = it.payload.sha256
            if it.summary is not None:
                row["summary"] = it.summary
            items.append(row)
        return {
            "qid": self.qid,
            "setting": self.setting,
            "generator": self.generator,
            "answer_text": self.answer_text,
            "question": self.bundle.question,
            "items": items,
            "images_sent": self.images_sent,
            "texts_sent": self.texts_sent,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, row: dict[str, Any], resolve_image: Callable[[str, str], ImageAsset]) -> "RagAnswer":
        """Rebuild an answer; ``resolve_image(ref, image_key)`` returns the stored image."""
        items = []
        for it in row["items"]:
            source = (it["doc_id"], int(it["page_no"]))
            if it["kind"] == "text":
                payload = it["text"]
            else:
                payload = resolve_image(it["ref"], it["image_key"])
                if payload.sha256 != it["sha256"]:
                    raise ValueError(f"image {it['image_key']} changed since the answer was generated")
            items.append(ContextItem(it["kind"], payload, source, float(it["score"]), it["ref"], it.get("summary")))
        bundle = ContextBundle(row["question"], tuple(items))
        return cls(row["qid"], row["setting"], row["generator"], row["answer_text"], bundle,
                   row["images_sent"], row["texts_sent"], row.get("error"))

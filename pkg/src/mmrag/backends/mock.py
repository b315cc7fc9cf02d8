"""Deterministic offline backends.

Every mock is a pure function of (seed, inputs). Conventions the mocks
understand, used by the synthetic test data:

* ``CTX[value]`` anywhere in prompt text, or inside image bytes, is a fact the
  echo generator repeats back as ``ANS[value]``.
* Images whose bytes start with ``MMTAG:<tag>\\n`` carry a planted tag. The
  multimodal embedder maps the image and any query containing the word
  ``<tag>`` onto the same direction; the summarizer describes the image as
  ``IMG[<tag>]``.
* Images containing ``MMFAIL`` make the chat mock raise, to exercise
  per-item failure handling.
"""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np

from ..corpus import ImageAsset
from ..errors import BackendError
from ..prompts import JUDGE_METRIC_RE, QUESTION_LABEL, parse_sections
from .base import BackendProfile, ChatMessage, ChatModel, MultimodalEmbedder, TextEmbedder

TAG_PREFIX = b"MMTAG:"
FAIL_MARKER = b"MMFAIL"
CTX_RE = re.compile(r"CTX\[([^\[\]\n]+)\]")
ANS_RE = re.compile(r"ANS\[([^\[\]\n]+)\]")
WORD_RE = re.compile(r"[a-z0-9]+")
REFUSAL = "I don't know based on the provided context."


def _seed_key(seed: int) -> bytes:
    return (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def image_tag(image: ImageAsset) -> str | None:
    if not image.data.startswith(TAG_PREFIX):
        return None
    head = image.data[len(TAG_PREFIX) :].split(b"\n", 1)[0]
    return head.decode("utf-8", "replace").strip().lower() or None


def image_facts(image: ImageAsset) -> list[str]:
    return CTX_RE.findall(image.data.decode("latin-1"))


def tagged_image(tag: str, body: str = "", image_id: str | None = None, source=("synthetic", 1)) -> ImageAsset:
    """Build a mock image carrying ``tag`` and optional embedded text."""
    data = TAG_PREFIX + tag.encode() + b"\n" + body.encode()
    return ImageAsset(image_id or f"img-{tag}", data, "image/png", source)


class MockTextEmbedder(TextEmbedder):
    """Hashes character 3-grams into a fixed-dim signed count vector, L2-normalized."""

    def __init__(self, profile: BackendProfile, seed: int = 0) -> None:
        super().__init__(profile)
        self.dim = profile.dim
        self._key = _seed_key(seed)
        self._gram_slots: dict[str, tuple[int, float]] = {}

    def _slot(self, gram: str) -> tuple[int, float]:
        hit = self._gram_slots.get(gram)
        if hit is None:
            h = int.from_bytes(hashlib.blake2b(gram.encode(), key=self._key, digest_size=8).digest(), "little")
            hit = (h % self.dim, 1.0 if (h >> 32) & 1 else -1.0)
            self._gram_slots[gram] = hit
        return hit

    def vector(self, text: str) -> np.ndarray:
        norm = " " + " ".join(text.lower().split()) + " "
        v = np.zeros(self.dim)
        for i in range(len(norm) - 2):
            idx, sign = self._slot(norm[i : i + 3])
            v[idx] += sign
        if not v.any():
            # every gram cancelled out; fall back to a single deterministic slot
            v[self._slot(norm)[0]] = 1.0
        return _normalize(v)

    def _embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return [self.vector(t) for t in texts]


class MockMultimodalEmbedder(MultimodalEmbedder):
    """Planted-correlation stand-in for a CLIP model.

    Queries are the normalized sum of per-word random directions. A tagged
    image sits on its tag word's direction plus a small content-hash
    perturbation; untagged images get a direction from their content hash.
    """

    TAG_NOISE = 0.05

    def __init__(self, profile: BackendProfile, seed: int = 0) -> None:
        super().__init__(profile)
        self.dim = profile.dim
        self._key = _seed_key(seed)
        self._dirs: dict[str, np.ndarray] = {}

    def direction(self, token: str) -> np.ndarray:
        v = self._dirs.get(token)
        if v is None:
            h = hashlib.blake2b(token.encode(), key=self._key, digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(h, "little"))
            v = _normalize(rng.standard_normal(self.dim))
            self._dirs[token] = v
        return v

    def _embed_image(self, image: ImageAsset) -> np.ndarray:
        content = self.direction("\x00sha256:" + image.sha256)
        tag = image_tag(image)
        if tag is None:
            return content
        return _normalize(self.direction(tag) + self.TAG_NOISE * content)

    def _embed_query(self, question: str) -> np.ndarray:
        words = WORD_RE.findall(question.lower())
        if not words:
            return self.direction("\x00empty")
        return _normalize(np.sum([self.direction(w) for w in words], axis=0))


class MockChat(ChatModel):
    """Echo generator, image summarizer and rule-based judge in one.

    Which role it plays is decided from the prompt: a ``Metric:`` header
    selects judging, a prompt with images but no question selects
    summarization, anything else is answered by echoing context facts.
    """

    def __init__(self, profile: BackendProfile, seed: int = 0) -> None:
        super().__init__(profile)
        self.seed = seed

    def _complete(self, messages: list[ChatMessage]) -> str:
        text = "\n".join(m.text for m in messages)
        images = [img for m in messages for img in m.images]
        for img in images:
            if FAIL_MARKER in img.data:
                raise BackendError(f"mock failure injected for image {img.image_id!r}")
        metric = JUDGE_METRIC_RE.search(text)
        if metric:
            out = self._judge(metric.group(1), text, images)
        elif images and not re.search(rf"^{QUESTION_LABEL}", text, re.MULTILINE):
            out = self._summarize(images)
        else:
            out = self._answer(text, images)
        return self._truncate(out)

    def _truncate(self, text: str) -> str:
        words = text.split(" ")
        return " ".join(words[: self.params.max_tokens])

    def _summarize(self, images: list[ImageAsset]) -> str:
        parts = []
        for img in images:
            tag = image_tag(img) or img.sha256[:12]
            parts.append(f"IMG[{tag}]")
        return " ".join(parts)

    def _answer(self, text: str, images: list[ImageAsset]) -> str:
        facts = CTX_RE.findall(text)
        for img in images:
            facts.extend(image_facts(img))
        if not facts:
            return REFUSAL
        unique = list(dict.fromkeys(facts))
        return "Based on the context: " + " ".join(f"ANS[{f}]" for f in unique)

    def _judge(self, metric: str, text: str, images: list[ImageAsset]) -> str:
        sec = parse_sections(text)
        answer = sec.get("generated_answer", "")
        values = ANS_RE.findall(answer)
        q_words = {w for w in WORD_RE.findall(sec.get("question", "").lower()) if len(w) >= 5}
        if metric == "answer_correctness":
            ref = sec.get("reference_answer", "")
            grade = int(bool(ref) and ref in answer)
            reason = "reference answer found in generated answer" if grade else "reference answer missing"
        elif metric == "answer_relevancy":
            grade = int(bool(answer.strip()) and REFUSAL not in answer)
            reason = "answer addresses the question" if grade else "answer declines to address the question"
        elif metric == "text_faithfulness":
            ctx = sec.get("text_context", "")
            grade = int(any(v in ctx for v in values))
            reason = "answer facts appear in text context" if grade else "no answer fact supported by text context"
        elif metric == "image_faithfulness":
            shown = {f for img in images for f in image_facts(img)}
            grade = int(any(v in shown for v in values))
            reason = "answer facts appear in images" if grade else "no answer fact supported by images"
        elif metric == "text_context_relevancy":
            ctx_words = set(WORD_RE.findall(sec.get("text_context", "").lower()))
            grade = int(bool(q_words & ctx_words))
            reason = "context shares key terms with question" if grade else "context unrelated to question"
        elif metric == "image_context_relevancy":
            tags = {image_tag(img) for img in images}
            grade = int(bool(q_words & tags))
            reason = "image topic matches question" if grade else "image topic unrelated to question"
        else:
            raise BackendError(f"mock judge does not know metric {metric!r}")
        return json.dumps({"grade": grade, "reason": reason})

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

from ..corpus import ImageAsset
from ..errors import BackendError, EmptyCompletion, ImageLimitError

Role = Literal["system", "user", "assistant"]
Part = Union[str, ImageAsset]
BackendKind = Literal["text_embed", "multimodal_embed", "chat"]


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 300

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


# Hosted GPT-4V and LLaVA-1.6 generation settings used in the experiments.
GPT4V_PARAMS = GenerationParams(temperature=0.7, top_p=0.95, max_tokens=300)
LLAVA_PARAMS = GenerationParams(temperature=1.0, top_p=1.0, max_tokens=300)


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("a chat message needs at least one part")
        if self.role != "user" and any(isinstance(p, ImageAsset) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    @classmethod
    def system(cls, text: str) -> "ChatMessage":
        return cls("system", (text,))

    @classmethod
    def user(cls, *parts: Part) -> "ChatMessage":
        return cls("user", tuple(parts))

    @property
    def text(self) -> str:
        return "".join(p for p in self.parts if isinstance(p, str))

    @property
    def images(self) -> list[ImageAsset]:
        return [p for p in self.parts if isinstance(p, ImageAsset)]


def count_images(messages: Sequence[ChatMessage]) -> int:
    return sum(len(m.images) for m in messages)


@dataclass(frozen=True)
class BackendProfile:
    """How to reach one model service.

    ``endpoint`` is either a base URL for an OpenAI-compatible API or the
    literal ``"mock"`` for the deterministic offline backends.
    """

    name: str
    kind: BackendKind
    endpoint: str
    model_id: str
    params: GenerationParams | None = None
    max_images_per_prompt: int = 1
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    max_concurrency: int = 4
    dim: int = 64  # mock embedders only

    def __post_init__(self) -> None:
        if self.kind not in ("text_embed", "multimodal_embed", "chat"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_images_per_prompt < 1:
            raise ValueError("max_images_per_prompt must be >= 1")
        if self.kind == "chat" and self.params is None:
            raise ValueError(f"chat profile {self.name!r} needs generation params")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"


class _Bounded:
    """Caps the number of in-flight calls and counts them."""

    def __init__(self, profile: BackendProfile) -> None:
        self.profile = profile
        self._slots = threading.BoundedSemaphore(profile.max_concurrency)
        self._lock = threading.Lock()
        self.calls = 0

    def _enter(self) -> None:
        self._slots.acquire()
        with self._lock:
            self.calls += 1

    def _exit(self) -> None:
        self._slots.release()


def _check_vectors(vectors: Sequence[np.ndarray], expected: int) -> list[np.ndarray]:
    if len(vectors) != expected:
        raise BackendError(f"backend returned {len(vectors)} vectors for {expected} inputs")
    out = [np.asarray(v, dtype=np.float64) for v in vectors]
    dims = {v.shape for v in out}
    if len(dims) > 1:
        raise BackendError(f"dimension mismatch across batch: {sorted(d[0] for d in dims)}")
    for v in out:
        if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
            raise BackendError("backend returned an empty or non-finite vector")
    return out


class TextEmbedder(_Bounded):
    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed_texts needs at least one text")
        for t in texts:
            if not t.strip():
                raise ValueError("cannot embed an empty text")
        self._enter()
        try:
            raw = self._embed_texts(list(texts))
        finally:
            self._exit()
        return _check_vectors(raw, len(texts))

    def _embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError


class MultimodalEmbedder(_Bounded):
    """Embeds images and text queries into one shared space."""

    def embed_image(self, image: ImageAsset) -> np.ndarray:
        if not image.data:
            raise ValueError("cannot embed an empty image")
        self._enter()
        try:
            raw = self._embed_image(image)
        finally:
            self._exit()
        return _check_vectors([raw], 1)[0]

    def embed_query(self, question: str) -> np.ndarray:
        if not question.strip():
            raise ValueError("cannot embed an empty question")
        self._enter()
        try:
            raw = self._embed_query(question)
        finally:
            self._exit()
        return _check_vectors([raw], 1)[0]

    def _embed_image(self, image: ImageAsset) -> np.ndarray:
        raise NotImplementedError

    def _embed_query(self, question: str) -> np.ndarray:
        raise NotImplementedError


class ChatModel(_Bounded):
    @property
    def params(self) -> GenerationParams:
        assert self.profile.params is not None
        return self.profile.params

    @property
    def max_images(self) -> int:
        return self.profile.max_images_per_prompt

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        if not messages:
            raise ValueError("chat_complete needs at least one message")
        n_images = count_images(messages)
        if n_images > self.max_images:
            raise ImageLimitError(
                f"{n_images} images in prompt but backend {self.profile.name!r} accepts at most {self.max_images}"
            )
        self._enter()
        try:
            text = self._complete(list(messages))
        finally:
            self._exit()
        if not text or not text.strip():
            raise EmptyCompletion(f"backend {self.profile.name!r} returned an empty completion")
        return text

    def _complete(self, messages: list[ChatMessage]) -> str:
        raise NotImplementedError

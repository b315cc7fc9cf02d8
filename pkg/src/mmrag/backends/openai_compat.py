"""Clients for OpenAI-compatible ``/embeddings`` and ``/chat/completions`` APIs."""

from __future__ import annotations

import logging
import os
import time
from typing import Any

import httpx
import numpy as np

from ..corpus import ImageAsset
from ..errors import BackendError, ConfigError, TransportError
from .base import BackendProfile, ChatMessage, ChatModel, MultimodalEmbedder, TextEmbedder

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 0.5


def api_key_for(profile: BackendProfile) -> str:
    key = os.environ.get(profile.api_key_env, "")
    if not key:
        raise ConfigError(f"backend {profile.name!r}: environment variable {profile.api_key_env} is not set")
    return key


class HttpClient:
    """Thin JSON-over-HTTP client with bounded retries.

    Retries transport errors, 429 and 5xx up to three attempts with
    exponential backoff; any other 4xx fails immediately.
    """

    def __init__(self, profile: BackendProfile, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep) -> None:
        self.profile = profile
        self._sleep = sleep
        self._client = httpx.Client(
            base_url=profile.endpoint.rstrip("/"),
            timeout=profile.timeout_s,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key_for(profile)}"},
        )

    def post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        last: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt:
                self._sleep(BACKOFF_BASE_S * 2 ** (attempt - 1))
            try:
                resp = self._client.post(path, json=body)
            except httpx.HTTPError as exc:
                last = TransportError(f"{self.profile.name}: {exc}")
                log.warning("attempt %d to %s%s failed: %s", attempt + 1, self.profile.endpoint, path, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"{self.profile.name}: HTTP {resp.status_code}")
                log.warning("attempt %d to %s%s got HTTP %d", attempt + 1, self.profile.endpoint, path, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"{self.profile.name}: HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"{self.profile.name}: response is not JSON") from exc
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


def _embeddings_from(payload: dict[str, Any], n: int, name: str) -> list[np.ndarray]:
    try:
        data = sorted(payload["data"], key=lambda d: d.get("index", 0))
        return [np.asarray(d["embedding"], dtype=np.float64) for d in data]
    except (KeyError, TypeError) as exc:
        raise BackendError(f"{name}: malformed embeddings response") from exc


class HttpTextEmbedder(TextEmbedder):
    def __init__(self, profile: BackendProfile, transport: httpx.BaseTransport | None = None) -> None:
        super().__init__(profile)
        self.http = HttpClient(profile, transport)

    def _embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        payload = self.http.post("/embeddings", {"model": self.profile.model_id, "input": texts})
        return _embeddings_from(payload, len(texts), self.profile.name)


class HttpMultimodalEmbedder(MultimodalEmbedder):
    """CLIP-style server behind the embeddings route.

    Images travel as base64 data URLs in ``input``; text queries as plain
    strings. Both land in the model's shared space.
    """

    def __init__(self, profile: BackendProfile, transport: httpx.BaseTransport | None = None) -> None:
        super().__init__(profile)
        self.http = HttpClient(profile, transport)

    def _embed_image(self, image: ImageAsset) -> np.ndarray:
        payload = self.http.post("/embeddings", {"model": self.profile.model_id, "input": [image.data_url()]})
        return _embeddings_from(payload, 1, self.profile.name)[0]

    def _embed_query(self, question: str) -> np.ndarray:
        payload = self.http.post("/embeddings", {"model": self.profile.model_id, "input": [question]})
        return _embeddings_from(payload, 1, self.profile.name)[0]


def message_to_wire(message: ChatMessage) -> dict[str, Any]:
    if all(isinstance(p, str) for p in message.parts):
        return {"role": message.role, "content": message.text}
    content = []
    for part in message.parts:
        if isinstance(part, str):
            content.append({"type": "text", "text": part})
        else:
            content.append({"type": "image_url", "image_url": {"url": part.data_url()}})
    return {"role": message.role, "content": content}


class HttpChatModel(ChatModel):
    def __init__(self, profile: BackendProfile, transport: httpx.BaseTransport | None = None) -> None:
        super().__init__(profile)
        self.http = HttpClient(profile, transport)

    def request_body(self, messages: list[ChatMessage]) -> dict[str, Any]:
        p = self.params
        return {
            "model": self.profile.model_id,
            "messages": [message_to_wire(m) for m in messages],
            "temperature": p.temperature,
            "top_p": p.top_p,
            "max_tokens": p.max_tokens,
        }

    def _complete(self, messages: list[ChatMessage]) -> str:
        payload = self.http.post("/chat/completions", self.request_body(messages))
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.profile.name}: malformed chat response") from exc
        if isinstance(content, list):
            content = "".join(c.get("text", "") for c in content if isinstance(c, dict))
        return content or ""

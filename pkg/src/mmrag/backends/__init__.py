"""Embedding and chat backends: OpenAI-compatible HTTP clients and offline mocks."""

from __future__ import annotations

from .base import (
    GPT4V_PARAMS,
    LLAVA_PARAMS,
    BackendProfile,
    ChatMessage,
    ChatModel,
    GenerationParams,
    MultimodalEmbedder,
    TextEmbedder,
    count_images,
)
from .mock import MockChat, MockMultimodalEmbedder, MockTextEmbedder
from .openai_compat import HttpChatModel, HttpMultimodalEmbedder, HttpTextEmbedder

__all__ = [
    "GPT4V_PARAMS",
    "LLAVA_PARAMS",
    "BackendProfile",
    "ChatMessage",
    "ChatModel",
    "GenerationParams",
    "MultimodalEmbedder",
    "TextEmbedder",
    "count_images",
    "make_backend",
]

_MOCKS = {"text_embed": MockTextEmbedder, "multimodal_embed": MockMultimodalEmbedder, "chat": MockChat}
_HTTP = {"text_embed": HttpTextEmbedder, "multimodal_embed": HttpMultimodalEmbedder, "chat": HttpChatModel}


def make_backend(profile: BackendProfile, seed: int = 0):
    """Instantiate the client for ``profile``; mocks are seeded, HTTP clients are not."""
    if profile.is_mock:
        return _MOCKS[profile.kind](profile, seed=seed)
    return _HTTP[profile.kind](profile)

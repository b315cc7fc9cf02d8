"""Image-to-text summaries used as retrieval surrogates, with a disk cache."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path

from .backends import ChatMessage, ChatModel
from .corpus import ImageAsset
from .errors import BackendError
from .prompts import PromptTemplate, load_template

log = logging.getLogger(__name__)


class SummaryCache:
    """JSON-lines file of ``{image_sha256, model_id, summary_text}`` rows.

    Rows are appended as summaries are produced; with ``path=None`` the cache
    lives in memory only.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._rows: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        row = json.loads(line)
                        self._rows[(row["image_sha256"], row["model_id"])] = row["summary_text"]

    def get(self, image_sha256: str, model_id: str) -> str | None:
        return self._rows.get((image_sha256, model_id))

    def put(self, image_sha256: str, model_id: str, summary: str) -> None:
        with self._lock:
            key = (image_sha256, model_id)
            if key in self._rows:
                return
            self._rows[key] = summary
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    row = {"image_sha256": image_sha256, "model_id": model_id, "summary_text": summary}
                    fh.write(json.dumps(row, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._rows)


def default_summary_template() -> PromptTemplate:
    return load_template("image_summary", set())


def summarize_image(
    chat: ChatModel,
    image: ImageAsset,
    template: PromptTemplate | None = None,
    cache: SummaryCache | None = None,
) -> str:
    model_id = chat.profile.model_id
    if cache is not None:
        hit = cache.get(image.sha256, model_id)
        if hit is not None:
            return hit
    template = template or default_summary_template()
    messages = [ChatMessage.system(template.system_text), ChatMessage.user(template.render(), image)]
    text = chat.complete(messages).strip()
    # keep within the generation budget even if the server ignores max_tokens
    words = text.split()
    if len(words) > chat.params.max_tokens:
        text = " ".join(words[: chat.params.max_tokens])
    if not text:
        raise BackendError(f"empty summary for image {image.image_id!r}")
    if cache is not None:
        cache.put(image.sha256, model_id, text)
    return text

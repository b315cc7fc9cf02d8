"""Page-aligned multimodal corpora and QA test sets.

Corpus files are UTF-8 JSON-lines; each line is one page record carrying the
full page text and at most one image. A page with several images appears once
per image, each line repeating the page text.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import SchemaError

Source = tuple[str, int]

RASTER_MEDIA_TYPES = frozenset(
    {
        "image/png",
        "image/jpeg",
        "image/jpg",
        "image/gif",
        "image/bmp",
        "image/webp",
        "image/tiff",
    }
)


@dataclass(frozen=True)
class ImageAsset:
    image_id: str
    data: bytes
    media_type: str
    source: Source

    def __post_init__(self) -> None:
        if not self.data:
            raise ValueError(f"image {self.image_id!r} has an empty payload")
        if self.media_type not in RASTER_MEDIA_TYPES:
            raise ValueError(f"image {self.image_id!r}: {self.media_type!r} is not a raster image type")

    @property
    def key(self) -> str:
        """Corpus-unique identifier, also used as the document-store id."""
        doc_id, page_no = self.source
        return f"{doc_id}/p{page_no}/{self.image_id}"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


@dataclass(frozen=True)
class PageRecord:
    doc_id: str
    page_no: int
    page_text: str
    image: ImageAsset | None = None

    @property
    def source(self) -> Source:
        return (self.doc_id, self.page_no)


@dataclass(frozen=True)
class TextChunk:
    chunk_id: str
    text: str
    source: Source
    word_count: int


@dataclass(frozen=True)
class ChunkConfig:
    """Fixed-size word windows; ``stride < window`` gives overlapping chunks."""

    window: int = 225
    stride: int = 180

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("chunk window must be >= 1")
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"chunk stride must be in [1, window={self.window}], got {self.stride}")


@dataclass(frozen=True)
class QAQuadruple:
    qid: str
    question: str
    reference_answer: str
    gold_text: str
    gold_image: ImageAsset | None
    source_page: Source


@dataclass(frozen=True)
class Corpus:
    pages: tuple[PageRecord, ...] = ()
    chunks: tuple[TextChunk, ...] = ()
    images: tuple[ImageAsset, ...] = ()

    def page_sources(self) -> set[Source]:
        return {p.source for p in self.pages}

    def image_by_key(self) -> dict[str, ImageAsset]:
        return {img.key: img for img in self.images}

    @classmethod
    def from_pages(cls, pages: Iterable[PageRecord], cfg: ChunkConfig | None = None) -> "Corpus":
        pages = tuple(pages)
        _check_unique(pages)
        cfg = cfg or ChunkConfig()
        chunks: list[TextChunk] = []
        seen: set[Source] = set()
        for page in pages:
            # Pages with several images repeat their text; chunk each page once.
            if page.source in seen:
                continue
            seen.add(page.source)
            chunks.extend(chunk_text(page.page_text, cfg, source=page.source))
        images = tuple(p.image for p in pages if p.image is not None)
        return cls(pages=pages, chunks=tuple(chunks), images=images)


def _check_unique(pages: tuple[PageRecord, ...]) -> None:
    seen: dict[tuple[str, int, str | None], int] = {}
    for i, page in enumerate(pages, start=1):
        key = (page.doc_id, page.page_no, page.image.image_id if page.image else None)
        if key in seen:
            raise SchemaError(
                f"duplicate (doc_id, page_no, image_id) {key}, first seen on line {seen[key]}",
                line=i,
            )
        seen[key] = i


# ---------------------------------------------------------------------------
# chunking


def chunk_text(page_text: str, cfg: ChunkConfig | None = None, *, source: Source = ("", 0)) -> list[TextChunk]:
    """Split ``page_text`` into whitespace-word windows.

    Windows start at offsets ``0, stride, 2*stride, ...`` and the last one may
    be shorter. No window is emitted that lies entirely inside the previous one.
    """
    cfg = cfg or ChunkConfig()
    words = page_text.split()
    chunks: list[TextChunk] = []
    start = 0
    doc_id, page_no = source
    while start < len(words):
        piece = words[start : start + cfg.window]
        chunks.append(
            TextChunk(
                chunk_id=f"{doc_id}/p{page_no}/c{len(chunks)}",
                text=" ".join(piece),
                source=source,
                word_count=len(piece),
            )
        )
        if start + cfg.window >= len(words):
            break
        start += cfg.stride
    return chunks


# ---------------------------------------------------------------------------
# JSON-lines I/O


def _iter_json_lines(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"malformed JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("expected a JSON object", line=lineno)
            yield lineno, obj


def _require(obj: dict[str, Any], name: str, kind: type | tuple[type, ...], lineno: int) -> Any:
    if name not in obj or obj[name] is None:
        raise SchemaError("missing required field", line=lineno, field=name)
    value = obj[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaError(f"wrong type {type(value).__name__}", line=lineno, field=name)
    return value


def _parse_image(raw: Any, source: Source, base_dir: Path, lineno: int, field_name: str) -> ImageAsset | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise SchemaError("expected an object or null", line=lineno, field=field_name)
    image_id = _require(raw, "image_id", str, lineno)
    media_type = _require(raw, "media_type", str, lineno)
    has_b64 = raw.get("base64") is not None
    has_ref = raw.get("image_ref") is not None
    if has_b64 == has_ref:
        raise SchemaError("exactly one of 'base64' or 'image_ref' is required", line=lineno, field=f"{field_name}.base64")
    if has_b64:
        try:
            data = base64.b64decode(raw["base64"], validate=True)
        except (binascii.Error, TypeError) as exc:
            raise SchemaError("invalid base64 payload", line=lineno, field=f"{field_name}.base64") from exc
    else:
        ref = base_dir / raw["image_ref"]
        try:
            data = ref.read_bytes()
        except OSError as exc:
            raise SchemaError(f"cannot read image file {ref}: {exc}", line=lineno, field=f"{field_name}.image_ref") from exc
    try:
        return ImageAsset(image_id=image_id, data=data, media_type=media_type, source=source)
    except ValueError as exc:
        raise SchemaError(str(exc), line=lineno, field=field_name) from exc


def _parse_source(obj: dict[str, Any], lineno: int) -> Source:
    doc_id = _require(obj, "doc_id", str, lineno)
    page_no = _require(obj, "page_no", int, lineno)
    if page_no < 1:
        raise SchemaError("page_no must be a positive integer", line=lineno, field="page_no")
    return doc_id, page_no


def load_corpus(path: str | Path, cfg: ChunkConfig | None = None) -> Corpus:
    """Load a corpus JSON-lines file, preserving record order."""
    path = Path(path)
    pages = []
    for lineno, obj in _iter_json_lines(path):
        doc_id, page_no = _parse_source(obj, lineno)
        page_text = obj.get("page_text", "")
        if not isinstance(page_text, str):
            raise SchemaError("wrong type", line=lineno, field="page_text")
        image = _parse_image(obj.get("image"), (doc_id, page_no), path.parent, lineno, "image")
        pages.append(PageRecord(doc_id, page_no, page_text, image))
    return Corpus.from_pages(pages, cfg)


def load_testset(path: str | Path) -> list[QAQuadruple]:
    path = Path(path)
    out = []
    for lineno, obj in _iter_json_lines(path):
        qid = _require(obj, "qid", str, lineno)
        question = _require(obj, "question", str, lineno)
        answer = _require(obj, "reference_answer", str, lineno)
        if not question.strip():
            raise SchemaError("must not be empty", line=lineno, field="question")
        if not answer.strip():
            raise SchemaError("must not be empty", line=lineno, field="reference_answer")
        gold_text = obj.get("gold_text") or ""
        if not isinstance(gold_text, str):
            raise SchemaError("wrong type", line=lineno, field="gold_text")
        source = _parse_source(obj, lineno)
        gold_image = _parse_image(obj.get("gold_image"), source, path.parent, lineno, "gold_image")
        out.append(QAQuadruple(qid, question, answer, gold_text, gold_image, source))
    qids = [q.qid for q in out]
    if len(set(qids)) != len(qids):
        raise SchemaError("duplicate qid in test set", field="qid")
    return out


def image_to_json(image: ImageAsset | None) -> dict[str, Any] | None:
    if image is None:
        return None
    return {
        "image_id": image.image_id,
        "media_type": image.media_type,
        "base64": base64.b64encode(image.data).decode("ascii"),
    }


def page_to_json(page: PageRecord) -> dict[str, Any]:
    return {
        "doc_id": page.doc_id,
        "page_no": page.page_no,
        "page_text": page.page_text,
        "image": image_to_json(page.image),
    }


def quadruple_to_json(q: QAQuadruple) -> dict[str, Any]:
    return {
        "qid": q.qid,
        "question": q.question,
        "reference_answer": q.reference_answer,
        "gold_text": q.gold_text,
        "gold_image": image_to_json(q.gold_image),
        "doc_id": q.source_page[0],
        "page_no": q.source_page[1],
    }


def write_jsonl(path: Path, rows: Iterable[dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    tmp.replace(path)


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    return [obj for _, obj in _iter_json_lines(Path(path))]


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write ``corpus`` with images inlined as base64."""
    write_jsonl(Path(path), (page_to_json(p) for p in corpus.pages))


def save_chunks(chunks: Iterable[TextChunk], path: str | Path) -> None:
    write_jsonl(
        Path(path),
        (
            {"chunk_id": c.chunk_id, "doc_id": c.source[0], "page_no": c.source[1], "text": c.text, "word_count": c.word_count}
            for c in chunks
        ),
    )


def save_testset(testset: Iterable[QAQuadruple], path: str | Path) -> None:
    write_jsonl(Path(path), (quadruple_to_json(q) for q in testset))

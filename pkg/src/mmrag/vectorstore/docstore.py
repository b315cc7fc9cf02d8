from __future__ import annotations

from typing import Iterator, Union

from ..corpus import ImageAsset, TextChunk
from ..errors import VectorStoreError

Payload = Union[TextChunk, ImageAsset]


class DocStore:
    """Id -> original payload, the "document" half of multi-vector retrieval.

    An entry may carry a surrogate text (e.g. an image summary) that was
    embedded in place of the payload.
    """

    def __init__(self) -> None:
        self._items: dict[str, Payload] = {}
        self._surrogates: dict[str, str] = {}

    def put(self, id: str, payload: Payload, surrogate: str | None = None) -> None:
        if id in self._items:
            raise VectorStoreError(f"document id {id!r} already stored")
        if not isinstance(payload, (TextChunk, ImageAsset)):
            raise TypeError(f"unsupported payload type {type(payload).__name__}")
        self._items[id] = payload
        if surrogate is not None:
            self._surrogates[id] = surrogate

    def get(self, id: str) -> Payload:
        try:
            return self._items[id]
        except KeyError:
            raise VectorStoreError(f"document id {id!r} not found") from None

    def surrogate(self, id: str) -> str | None:
        return self._surrogates.get(id)

    def __contains__(self, id: str) -> bool:
        return id in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def items(self):
        return self._items.items()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DocStore):
            return NotImplemented
        return self._items == other._items and self._surrogates == other._surrogates

"""Single-file persistence for an index and its document store.

Layout::

    magic "MMRAGHNS" | u32 version | u32 section count
    repeated: 4-byte tag | u64 length | u32 crc32 | payload

Sections: META (JSON), VECS (float64 vectors), LVLS (int32 node levels),
GRPH (int32 degrees then int64 adjacency), DOCS (document store entries).
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..corpus import ImageAsset, TextChunk
from ..errors import IndexFormatError
from .docstore import DocStore
from .hnsw import HnswIndex, HnswParams

MAGIC = b"MMRAGHNS"
VERSION = 1
_HEAD = struct.Struct("<8sII")
_SEC = struct.Struct("<4sQI")


def _docs_blob(store: DocStore) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(store)))
    for id, payload in store.items():
        if isinstance(payload, TextChunk):
            head = {"id": id, "kind": "text", "chunk_id": payload.chunk_id, "source": list(payload.source),
                    "word_count": payload.word_count}
            body = payload.text.encode("utf-8")
        else:
            head = {"id": id, "kind": "image", "image_id": payload.image_id, "media_type": payload.media_type,
                    "source": list(payload.source)}
            body = payload.data
        surrogate = store.surrogate(id)
        if surrogate is not None:
            head["surrogate"] = surrogate
        hb = json.dumps(head, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(hb)))
        buf.write(hb)
        buf.write(struct.pack("<Q", len(body)))
        buf.write(body)
    return buf.getvalue()


def _read_docs(blob: bytes) -> DocStore:
    store = DocStore()
    view = memoryview(blob)
    try:
        (count,) = struct.unpack_from("<I", view, 0)
        off = 4
        for _ in range(count):
            (hl,) = struct.unpack_from("<I", view, off)
            off += 4
            head = json.loads(bytes(view[off : off + hl]))
            off += hl
            (bl,) = struct.unpack_from("<Q", view, off)
            off += 8
            body = bytes(view[off : off + bl])
            if len(body) != bl:
                raise IndexFormatError("document section truncated")
            off += bl
            source = (head["source"][0], int(head["source"][1]))
            if head["kind"] == "text":
                payload = TextChunk(head["chunk_id"], body.decode("utf-8"), source, head["word_count"])
            else:
                payload = ImageAsset(head["image_id"], body, head["media_type"], source)
            store.put(head["id"], payload, head.get("surrogate"))
    except (struct.error, KeyError, ValueError) as exc:
        raise IndexFormatError(f"corrupt document section: {exc}") from exc
    return store


def save(index: HnswIndex, docstore: DocStore, path: str | Path) -> None:
    n = len(index)
    layers = max(index.num_layers, 1)
    meta = {
        "dim": index.dim,
        "params": {"M": index.params.M, "ef_construction": index.params.ef_construction,
                   "ef_search": index.params.ef_search},
        "seed": index.seed,
        "ids": index._ids,
        "entry": index._entry,
        "top": index._top,
        "layers": layers,
        "sealed": index.sealed,
        "rng_state": index._rng.bit_generator.state,
    }
    sections = [
        (b"META", json.dumps(meta, sort_keys=True).encode("utf-8")),
        (b"VECS", np.ascontiguousarray(index._data[:n], dtype="<f8").tobytes()),
        (b"LVLS", np.ascontiguousarray(index._levels[:n], dtype="<i4").tobytes()),
        (b"GRPH", np.ascontiguousarray(index._deg[:layers, :n], dtype="<i4").tobytes()
         + np.ascontiguousarray(index._adj[:layers, :n], dtype="<i8").tobytes()),
        (b"DOCS", _docs_blob(docstore)),
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(sections)))
        for tag, payload in sections:
            fh.write(_SEC.pack(tag, len(payload), zlib.crc32(payload)))
            fh.write(payload)
    tmp.replace(path)


def load(path: str | Path) -> tuple[HnswIndex, DocStore]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise IndexFormatError(f"{path}: file too short for header")
    magic, version, count = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise IndexFormatError(f"{path}: not an index file")
    if version != VERSION:
        raise IndexFormatError(f"{path}: format version {version}, expected {VERSION}")
    off = _HEAD.size
    sections: dict[bytes, bytes] = {}
    for _ in range(count):
        if off + _SEC.size > len(raw):
            raise IndexFormatError(f"{path}: truncated section header")
        tag, length, crc = _SEC.unpack_from(raw, off)
        off += _SEC.size
        payload = raw[off : off + length]
        if len(payload) != length:
            raise IndexFormatError(f"{path}: section {tag!r} truncated")
        if zlib.crc32(payload) != crc:
            raise IndexFormatError(f"{path}: section {tag!r} checksum mismatch")
        sections[tag] = payload
        off += length
    missing = {b"META", b"VECS", b"LVLS", b"GRPH", b"DOCS"} - sections.keys()
    if missing:
        raise IndexFormatError(f"{path}: missing sections {sorted(missing)}")

    meta = json.loads(sections[b"META"])
    p = meta["params"]
    index = HnswIndex(meta["dim"], HnswParams(p["M"], p["ef_construction"], p["ef_search"]), seed=meta["seed"])
    ids = meta["ids"]
    n, layers, dim, m0 = len(ids), meta["layers"], meta["dim"], index.params.M0
    index._grow(max(n, 1), layers)
    try:
        index._data[:n] = np.frombuffer(sections[b"VECS"], dtype="<f8").reshape(n, dim)
        index._levels[:n] = np.frombuffer(sections[b"LVLS"], dtype="<i4")
        graph = sections[b"GRPH"]
        split = layers * n * 4
        index._deg[:layers, :n] = np.frombuffer(graph[:split], dtype="<i4").reshape(layers, n)
        index._adj[:layers, :n] = np.frombuffer(graph[split:], dtype="<i8").reshape(layers, n, m0)
    except ValueError as exc:
        raise IndexFormatError(f"{path}: inconsistent section sizes") from exc
    index._ids = list(ids)
    index._pos = {id: i for i, id in enumerate(ids)}
    index._entry = meta["entry"]
    index._top = meta["top"]
    index._rng.bit_generator.state = meta["rng_state"]
    index.sealed = meta["sealed"]
    return index, _read_docs(sections[b"DOCS"])

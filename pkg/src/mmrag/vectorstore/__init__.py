"""In-process HNSW index (L2) plus the document store used for multi-vector retrieval."""

from .docstore import DocStore, Payload
from .hnsw import HnswIndex, HnswParams, SearchHit, l2_distance
from .persist import load, save

__all__ = ["DocStore", "HnswIndex", "HnswParams", "Payload", "SearchHit", "l2_distance", "load", "save"]

"""Hierarchical Navigable Small World index under Euclidean distance.

Construction follows Malkov & Yashunin: each node draws a top layer from an
exponential distribution, insertion descends greedily through the upper
layers, then runs an ``ef_construction``-wide beam search on each layer it
belongs to and links to neighbors chosen by the diversity heuristic. Nodes
keep at most ``M`` links per upper layer and ``2*M`` on layer 0.

The graph walk and linking run in numba kernels over flat arrays; the Python
class owns ids, parameters and the seeded level generator.
"""

from __future__ import annotations

import heapq
import math
import threading
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import DimensionMismatch, VectorStoreError

MAX_LEVEL = 16


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64

    def __post_init__(self) -> None:
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef values must be >= 1")

    @property
    def M0(self) -> int:
        return 2 * self.M

    @property
    def level_mult(self) -> float:
        return 1.0 / math.log(self.M)


@dataclass(frozen=True, order=True)
class SearchHit:
    distance: float
    id: str


def l2_distance(a, b) -> float:
    """Euclidean distance between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    diff = a - b
    return float(math.sqrt(float(np.dot(diff, diff))))


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, inline="always")
def _d2(data, i, q):
    s = 0.0
    for k in range(q.shape[0]):
        t = data[i, k] - q[k]
        s += t * t
    return s


@numba.njit(cache=True)
def _search_layer(data, q, entries, adj, deg, layer, ef, visited, stamp):
    """Beam search on one layer. Returns (ids, sq_dists) ascending by (dist, id)."""
    e0 = entries[0]
    d0 = _d2(data, e0, q)
    cand = [(d0, e0)]
    res = [(-d0, -e0)]
    visited[e0] = stamp
    for j in range(1, entries.shape[0]):
        e = entries[j]
        if visited[e] == stamp:
            continue
        visited[e] = stamp
        d = _d2(data, e, q)
        heapq.heappush(cand, (d, e))
        heapq.heappush(res, (-d, -e))
        if len(res) > ef:
            heapq.heappop(res)
    while len(cand) > 0:
        dc, c = heapq.heappop(cand)
        if len(res) >= ef and dc > -res[0][0]:
            break
        for j in range(deg[layer, c]):
            n = adj[layer, c, j]
            if visited[n] == stamp:
                continue
            visited[n] = stamp
            d = _d2(data, n, q)
            if len(res) < ef or d < -res[0][0]:
                heapq.heappush(cand, (d, n))
                heapq.heappush(res, (-d, -n))
                if len(res) > ef:
                    heapq.heappop(res)
    m = len(res)
    ids = np.empty(m, dtype=np.int64)
    dists = np.empty(m, dtype=np.float64)
    # popping the max-heap yields (dist desc, id desc); fill from the back
    for j in range(m - 1, -1, -1):
        nd, ni = heapq.heappop(res)
        ids[j] = -ni
        dists[j] = -nd
    return ids, dists


@numba.njit(cache=True)
def _select_heuristic(data, ids, dists, limit):
    """Keep candidates (ascending by distance to the base point) that are
    closer to the base than to any already kept candidate."""
    out = np.empty(min(limit, ids.shape[0]), dtype=np.int64)
    n_out = 0
    for j in range(ids.shape[0]):
        if n_out >= limit:
            break
        e = ids[j]
        good = True
        for r in range(n_out):
            if _d2(data, out[r], data[e]) < dists[j]:
                good = False
                break
        if good:
            out[n_out] = e
            n_out += 1
    return out[:n_out]


@numba.njit(cache=True)
def _link(data, adj, deg, layer, node, neighbors, max_deg):
    for j in range(neighbors.shape[0]):
        adj[layer, node, j] = neighbors[j]
    deg[layer, node] = neighbors.shape[0]
    for j in range(neighbors.shape[0]):
        e = neighbors[j]
        k = deg[layer, e]
        if k < max_deg:
            adj[layer, e, k] = node
            deg[layer, e] = k + 1
            continue
        # e is full: re-select its links from old neighbors plus the new node
        cand_ids = np.empty(k + 1, dtype=np.int64)
        cand_d = np.empty(k + 1, dtype=np.float64)
        for t in range(k):
            cand_ids[t] = adj[layer, e, t]
            cand_d[t] = _d2(data, cand_ids[t], data[e])
        cand_ids[k] = node
        cand_d[k] = _d2(data, node, data[e])
        # sort by (distance, id)
        order = np.argsort(cand_ids, kind="mergesort")
        cand_ids = cand_ids[order]
        cand_d = cand_d[order]
        order = np.argsort(cand_d, kind="mergesort")
        kept = _select_heuristic(data, cand_ids[order], cand_d[order], max_deg)
        for t in range(kept.shape[0]):
            adj[layer, e, t] = kept[t]
        deg[layer, e] = kept.shape[0]


@numba.njit(cache=True)
def _insert(data, adj, deg, node, level, entry, top, M, M0, ef_c, visited, stamp):
    q = data[node]
    ep = np.empty(1, dtype=np.int64)
    ep[0] = entry
    for layer in range(top, level, -1):
        stamp += 1
        ids, _ = _search_layer(data, q, ep, adj, deg, layer, 1, visited, stamp)
        ep = ids[:1].copy()
    for layer in range(min(top, level), -1, -1):
        stamp += 1
        ids, dists = _search_layer(data, q, ep, adj, deg, layer, ef_c, visited, stamp)
        # the new node may take up to 2*M links on layer 0; measurably better
        # recall than M at the same ef_search
        chosen = _select_heuristic(data, ids, dists, M0 if layer == 0 else M)
        _link(data, adj, deg, layer, node, chosen, M0 if layer == 0 else M)
        ep = ids
    return stamp


@numba.njit(cache=True)
def _knn(data, adj, deg, entry, top, q, ef, n):
    visited = np.zeros(n, dtype=np.int32)
    ep = np.empty(1, dtype=np.int64)
    ep[0] = entry
    for layer in range(top, 0, -1):
        ids, _ = _search_layer(data, q, ep, adj, deg, layer, 1, visited, layer + 1)
        ep = ids[:1].copy()
    return _search_layer(data, q, ep, adj, deg, 0, ef, visited, 1)


# ---------------------------------------------------------------------------


class HnswIndex:
    """Approximate nearest-neighbor index over string-keyed vectors.

    Build by calling :meth:`insert` repeatedly, then :meth:`seal`; only a
    sealed index can be searched, and a sealed index is safe to search from
    several threads. Identical seed and insertion order give identical graphs.
    """

    def __init__(self, dim: int, params: HnswParams | None = None, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        cap = 16
        self._data = np.zeros((cap, dim), dtype=np.float64)
        self._levels = np.zeros(cap, dtype=np.int32)
        self._adj = np.zeros((1, cap, self.params.M0), dtype=np.int64)
        self._deg = np.zeros((1, cap), dtype=np.int32)
        self._visited = np.zeros(cap, dtype=np.int32)
        self._stamp = 0
        self._entry = -1
        self._top = -1
        self.sealed = False
        self._lock = threading.Lock()
        self.searches = 0

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, id: str) -> bool:
        return id in self._pos

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def entry_point(self) -> str | None:
        return self._ids[self._entry] if self._entry >= 0 else None

    def vector(self, id: str) -> np.ndarray:
        return self._data[self._pos[id]].copy()

    def level(self, id: str) -> int:
        return int(self._levels[self._pos[id]])

    def neighbors(self, id: str, layer: int) -> list[str]:
        i = self._pos[id]
        if layer > self._levels[i]:
            raise KeyError(f"{id!r} does not exist on layer {layer}")
        return [self._ids[j] for j in self._adj[layer, i, : self._deg[layer, i]]]

    @property
    def num_layers(self) -> int:
        return self._top + 1

    def _grow(self, need_cap: int, need_layers: int) -> None:
        cap = self._data.shape[0]
        layers = self._adj.shape[0]
        if need_cap > cap:
            new_cap = max(need_cap, cap * 2)
            self._data = np.concatenate([self._data, np.zeros((new_cap - cap, self.dim))])
            self._levels = np.concatenate([self._levels, np.zeros(new_cap - cap, dtype=np.int32)])
            self._visited = np.zeros(new_cap, dtype=np.int32)
            self._stamp = 0
            adj = np.zeros((layers, new_cap, self.params.M0), dtype=np.int64)
            adj[:, :cap] = self._adj
            deg = np.zeros((layers, new_cap), dtype=np.int32)
            deg[:, :cap] = self._deg
            self._adj, self._deg = adj, deg
            cap = new_cap
        if need_layers > layers:
            adj = np.zeros((need_layers, cap, self.params.M0), dtype=np.int64)
            adj[:layers] = self._adj
            deg = np.zeros((need_layers, cap), dtype=np.int32)
            deg[:layers] = self._deg
            self._adj, self._deg = adj, deg

    def _draw_level(self) -> int:
        u = self._rng.random()
        return min(int(-math.log(1.0 - u) * self.params.level_mult), MAX_LEVEL)

    def insert(self, id: str, vector) -> None:
        if self.sealed:
            raise VectorStoreError("index is sealed; rebuild to add entries")
        if id in self._pos:
            raise VectorStoreError(f"duplicate id {id!r}")
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"expected a vector of length {self.dim}, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector has non-finite values")
        node = len(self._ids)
        level = self._draw_level()
        self._grow(node + 1, level + 1)
        self._data[node] = v
        self._levels[node] = level
        self._ids.append(id)
        self._pos[id] = node
        if self._entry < 0:
            self._entry, self._top = node, level
            return
        if self._stamp > 2**30:
            self._visited[:] = 0
            self._stamp = 0
        p = self.params
        self._stamp = _insert(
            self._data, self._adj, self._deg, node, level, self._entry, self._top,
            p.M, p.M0, p.ef_construction, self._visited, self._stamp,
        )
        if level > self._top:
            self._entry, self._top = node, level

    def seal(self) -> "HnswIndex":
        self.sealed = True
        return self

    def search(self, query, k: int) -> list[SearchHit]:
        """Return up to ``k`` hits ascending by (L2 distance, id)."""
        if not self.sealed:
            raise VectorStoreError("index must be sealed before searching")
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            self.searches += 1
        if not self._ids:
            return []
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"expected a query of length {self.dim}, got shape {q.shape}")
        ef = max(self.params.ef_search, k)
        ids, d2 = _knn(self._data, self._adj, self._deg, self._entry, self._top, q, ef, len(self._ids))
        hits = sorted(SearchHit(math.sqrt(d), self._ids[i]) for i, d in zip(ids.tolist(), d2.tolist()))
        return hits[:k]

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrag.corpus import ImageAsset, TextChunk
from mmrag.errors import DimensionMismatch, IndexFormatError, VectorStoreError
from mmrag.vectorstore import DocStore, HnswIndex, HnswParams, l2_distance, load, save


def build(vectors, params=None, seed=0, prefix="v"):
    index = HnswIndex(vectors.shape[1], params, seed=seed)
    for i, v in enumerate(vectors):
        index.insert(f"{prefix}{i:05d}", v)
    return index.seal()


def brute(index, vectors, q, k, prefix="v"):
    d = [(math.sqrt(sum((a - b) ** 2 for a, b in zip(v, q))), f"{prefix}{i:05d}") for i, v in enumerate(vectors)]
    return sorted(d)[:k]


def loop_l2(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) * (x - y)
    return math.sqrt(total)


class TestL2:
    def test_identity(self):
        assert l2_distance([0, 0, 0], [0, 0, 0]) == 0

    def test_pythagoras(self):
        assert l2_distance([1, 2, 2], [0, 0, 0]) == 3

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = rng.normal(size=16), rng.normal(size=16)
            assert abs(l2_distance(a, b) - loop_l2(a, b)) < 1e-12
            assert l2_distance(a, b) == l2_distance(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            l2_distance([1, 2], [1, 2, 3])


class TestInsert:
    def test_first_insert_is_entry_point(self):
        index = HnswIndex(3)
        index.insert("a", [1, 2, 3])
        assert len(index) == 1 and index.entry_point == "a"

    def test_duplicate_id(self):
        index = HnswIndex(2)
        index.insert("a", [0, 0])
        with pytest.raises(VectorStoreError, match="duplicate"):
            index.insert("a", [1, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            HnswIndex(3).insert("a", [1, 2])

    def test_sealed_index_rejects_inserts(self):
        index = HnswIndex(2).seal()
        with pytest.raises(VectorStoreError):
            index.insert("a", [0, 0])

    def test_structural_audit_after_1000_inserts(self):
        vectors = np.random.default_rng(1).random((1000, 16))
        index = build(vectors)
        M, M0 = index.params.M, index.params.M0
        for id in index.ids:
            level = index.level(id)
            for layer in range(level + 1):
                nbrs = index.neighbors(id, layer)
                assert len(nbrs) <= (M0 if layer == 0 else M)
                assert id not in nbrs and len(set(nbrs)) == len(nbrs)
                # layers are nested: every neighbor also lives on this layer
                assert all(index.level(n) >= layer for n in nbrs)
            with pytest.raises(KeyError):
                index.neighbors(id, level + 1)
        assert index.level(index.entry_point) == index.num_layers - 1


class TestSearch:
    def test_unsealed_search_is_an_error(self):
        index = HnswIndex(2)
        index.insert("a", [0, 0])
        with pytest.raises(VectorStoreError, match="sealed"):
            index.search([0, 0], 1)

    def test_empty_index_returns_nothing(self):
        assert HnswIndex(4).seal().search([0, 0, 0, 0], 3) == []

    def test_single_entry(self):
        index = HnswIndex(3)
        index.insert("e", [1, 2, 3])
        hits = index.seal().search([1, 2, 3], 1)
        assert [(h.id, h.distance) for h in hits] == [("e", 0.0)]

    def test_k_larger_than_index(self):
        vectors = np.random.default_rng(2).random((5, 4))
        index = build(vectors)
        hits = index.search(vectors[0], 10)
        assert len(hits) == 5
        assert hits == sorted(hits)

    def test_query_dimension_mismatch(self):
        index = build(np.zeros((2, 3)) + [[0, 0, 0], [1, 1, 1]])
        with pytest.raises(DimensionMismatch):
            index.search([1, 2], 1)

    def test_ties_broken_by_id(self):
        index = HnswIndex(2)
        for id in ["c", "a", "b"]:
            index.insert(id, [1, 0])
        assert [h.id for h in index.seal().search([0, 0], 3)] == ["a", "b", "c"]

    @given(n=st.integers(1, 64), dim=st.integers(1, 8), k=st.integers(1, 70), seed=st.integers(0, 2**32))
    @settings(max_examples=100, deadline=None)
    def test_exact_when_small(self, n, dim, k, seed):
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(n, dim))
        index = build(vectors, seed=seed)
        q = rng.normal(size=dim)
        got = [(h.distance, h.id) for h in index.search(q, k)]
        want = brute(index, vectors, q, k)
        assert [i for _, i in got] == [i for _, i in want]
        assert all(abs(a - b) < 1e-9 for (a, _), (b, _) in zip(got, want))

    def test_monotone_k(self):
        rng = np.random.default_rng(3)
        vectors = rng.random((500, 8))
        index = build(vectors, HnswParams(ef_search=16))
        for q in rng.random((20, 8)):
            for k in range(1, 12):
                assert index.search(q, k) == index.search(q, k + 1)[:k]

    def test_deterministic_graphs(self):
        vectors = np.random.default_rng(4).random((300, 8))
        a, b = build(vectors, seed=9), build(vectors, seed=9)
        assert all(a.level(i) == b.level(i) and a.neighbors(i, 0) == b.neighbors(i, 0) for i in a.ids)
        q = np.full(8, 0.5)
        assert a.search(q, 5) == b.search(q, 5)

    def test_search_counter(self):
        index = build(np.random.default_rng(5).random((10, 3)))
        index.search(np.zeros(3), 2)
        index.search(np.zeros(3), 2)
        assert index.searches == 2


def image(i: int) -> ImageAsset:
    return ImageAsset(f"img{i}", bytes([137, 80, i % 256, 1, 2]), "image/png", ("d", 1 + i))


class TestPersistence:
    def test_round_trip_preserves_search(self, tmp_path):
        rng = np.random.default_rng(6)
        vectors = rng.random((400, 12))
        index = build(vectors)
        docs = DocStore()
        for i, id in enumerate(index.ids):
            if i % 2:
                docs.put(id, TextChunk(f"c{i}", f"text {i}", ("d", 1), 2))
            else:
                docs.put(id, image(i), surrogate=f"IMG[{i}]")
        save(index, docs, tmp_path / "x.hnsw")
        index2, docs2 = load(tmp_path / "x.hnsw")
        assert docs2 == docs
        for q in rng.random((50, 12)):
            assert index2.search(q, 4) == index.search(q, 4)

    def test_empty_index_round_trips(self, tmp_path):
        save(HnswIndex(5).seal(), DocStore(), tmp_path / "e.hnsw")
        index, docs = load(tmp_path / "e.hnsw")
        assert len(index) == 0 and len(docs) == 0 and index.dim == 5

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.hnsw"
        save(build(np.random.default_rng(0).random((50, 4))), DocStore(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(IndexFormatError):
            load(path)

    def test_corrupted_byte(self, tmp_path):
        path = tmp_path / "c.hnsw"
        save(build(np.random.default_rng(0).random((50, 4))), DocStore(), path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(IndexFormatError):
            load(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "v.hnsw"
        save(HnswIndex(2).seal(), DocStore(), path)
        blob = bytearray(path.read_bytes())
        blob[8] += 1  # version follows the 8-byte magic
        path.write_bytes(bytes(blob))
        with pytest.raises(IndexFormatError, match="version"):
            load(path)


class TestDocStore:
    def test_put_get_bytes(self):
        store = DocStore()
        img = image(3)
        store.put("a", img)
        assert store.get("a").data == img.data

    def test_unknown_and_duplicate(self):
        store = DocStore()
        store.put("a", image(1))
        with pytest.raises(VectorStoreError):
            store.get("b")
        with pytest.raises(VectorStoreError):
            store.put("a", image(2))

    def test_model_based_interleavings(self):
        rng = np.random.default_rng(8)
        store, model = DocStore(), {}
        for step in range(1000):
            id = f"k{rng.integers(0, 200)}"
            if rng.random() < 0.5:
                payload = image(step)
                if id in model:
                    with pytest.raises(VectorStoreError):
                        store.put(id, payload)
                else:
                    store.put(id, payload)
                    model[id] = payload
            elif id in model:
                assert store.get(id) is model[id]
            else:
                with pytest.raises(VectorStoreError):
                    store.get(id)
        assert dict(store.items()) == model

"""Immutable galleries of unit embeddings with exact, deterministic top-k search.

Scores are cosine similarities computed as float64 dot products of float32
unit vectors. BLAS results depend on the shape of the matrix product, so all
scoring goes through fixed-size, zero-padded tiles: a block of
``QUERY_BLOCK`` queries against ``ITEM_BLOCK`` gallery rows. The score of a
(query, item) pair is then the same whether the query is searched alone or
in a batch, whatever the worker count, and in a full gallery or any subset
of it.

Ties are broken by ascending id.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_write_bytes

QUERY_BLOCK = 32
ITEM_BLOCK = 2048

MAGIC = b"GAMAEMB1"
_HEADER = struct.Struct("<8sIQB")
_ID_LEN = struct.Struct("<H")


class DegenerateVectorError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


def l2_normalize(v) -> np.ndarray:
    """Scale a vector (or each row of a matrix) to unit L2 norm."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise DegenerateVectorError("degenerate embedding")
    return v / norms


@dataclass(frozen=True)
class EmbeddingRecords:
    """Raw ``(ids, vectors)`` as stored in an embedding file."""

    ids: tuple[str, ...]
    vectors: np.ndarray
    normalized: bool = False

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class QueryResult:
    ranked: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.ranked]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.ranked]

    def to_json(self) -> list:
        return [[i, s] for i, s in self.ranked]


class Gallery:
    """An ordered, immutable set of unit vectors keyed by string id."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, *, _trusted: bool = False):
        ids = tuple(str(i) for i in ids)
        if not ids:
            raise ValueError("empty gallery")
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ValueError(f"expected {len(ids)} vectors, got array of shape {vectors.shape}")
        index = {}
        for pos, i in enumerate(ids):
            if i in index:
                raise ValueError(f"duplicate id {i!r}")
            index[i] = pos
        if _trusted:
            unit = np.array(vectors, dtype=np.float32)
        else:
            if not np.all(np.isfinite(vectors)):
                raise ValueError("non-finite values in embeddings")
            unit = l2_normalize(vectors).astype(np.float32)
        unit.setflags(write=False)

        n, dim = unit.shape
        padded = np.zeros((math.ceil(n / ITEM_BLOCK) * ITEM_BLOCK, dim))
        padded[:n] = unit
        padded.setflags(write=False)

        order = sorted(range(n), key=ids.__getitem__)
        id_rank = np.empty(n, dtype=np.int64)
        id_rank[order] = np.arange(n)

        self._ids = ids
        self._index = index
        self._vectors = unit
        self._padded = padded
        self._id_rank = id_rank

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def nbytes(self) -> int:
        """Bytes taken by the float32 vectors."""
        return len(self) * self.dim * 4

    def __len__(self):
        return len(self._ids)

    def __eq__(self, other):
        if not isinstance(other, Gallery):
            return NotImplemented
        return self._ids == other._ids and np.array_equal(self._vectors, other._vectors)

    __hash__ = None

    def __contains__(self, item_id):
        return item_id in self._index

    def position(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(f"unknown id {item_id!r}") from None

    def vector(self, item_id: str) -> np.ndarray:
        return self._vectors[self.position(item_id)]

    def subset(self, ids: Iterable[str]) -> "Gallery":
        """Restrict to ``ids``, keeping the gallery's record order."""
        wanted = set()
        for i in ids:
            if i not in self._index:
                raise KeyError(f"unknown id {i!r}")
            wanted.add(i)
        positions = sorted(self._index[i] for i in wanted)
        return Gallery([self._ids[p] for p in positions], self._vectors[positions], _trusted=True)

    # -- scoring ------------------------------------------------------------

    def _check_queries(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise ValueError(f"query dimension {q.shape[-1]} does not match gallery dimension {self.dim}")
        return q

    def _score_block(self, block: np.ndarray) -> np.ndarray:
        """Scores of up to ``QUERY_BLOCK`` queries against every gallery row."""
        q = np.zeros((QUERY_BLOCK, self.dim))
        q[: len(block)] = block
        out = np.empty((QUERY_BLOCK, self._padded.shape[0]))
        for start in range(0, self._padded.shape[0], ITEM_BLOCK):
            out[:, start : start + ITEM_BLOCK] = q @ self._padded[start : start + ITEM_BLOCK].T
        return out[: len(block), : len(self)]

    def _select(self, scores: np.ndarray, k: int) -> QueryResult:
        n = len(scores)
        if k < n:
            part = np.argpartition(-scores, k - 1)[:k]
            cand = np.flatnonzero(scores >= scores[part].min())
        else:
            cand = np.arange(n)
        order = np.lexsort((self._id_rank[cand], -scores[cand]))[:k]
        picked = cand[order]
        return QueryResult(tuple((self._ids[p], float(scores[p])) for p in picked))

    def _topk_block(self, block: np.ndarray, k: int) -> list[QueryResult]:
        scores = self._score_block(block)
        return [self._select(row, k) for row in scores]

    def _ranks_block(self, block: np.ndarray, targets: np.ndarray) -> np.ndarray:
        scores = self._score_block(block)
        out = np.empty(len(block), dtype=np.int64)
        for i, (row, t) in enumerate(zip(scores, targets)):
            s = row[t]
            ahead = (row > s) | ((row == s) & (self._id_rank < self._id_rank[t]))
            out[i] = 1 + int(np.count_nonzero(ahead))
        return out

    def _map_blocks(self, fn, q: np.ndarray, workers: int, *extra):
        starts = range(0, len(q), QUERY_BLOCK)
        jobs = [(q[s : s + QUERY_BLOCK], *(e[s : s + QUERY_BLOCK] for e in extra)) for s in starts]
        if workers <= 1 or len(jobs) <= 1:
            return [fn(*job) for job in jobs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))

    def rank_of(self, queries, target_ids: Sequence[str], workers: int = 1) -> np.ndarray:
        """1-based rank of each target id in the ranking of its query."""
        q = self._check_queries(queries)
        if len(target_ids) != len(q):
            raise ValueError("one target id per query required")
        targets = np.array([self.position(t) for t in target_ids], dtype=np.int64)
        if len(q) == 0:
            return np.empty(0, dtype=np.int64)
        parts = self._map_blocks(self._ranks_block, q, workers, targets)
        return np.concatenate(parts)


def build_gallery(ids: Sequence[str], vectors) -> Gallery:
    """Validate, normalize and index embeddings into a :class:`Gallery`."""
    vectors = np.asarray(vectors)
    if len(ids) == 0:
        raise ValueError("empty gallery")
    if vectors.ndim != 2:
        raise ValueError("dimension mismatch: vectors must form a 2-D array of equal-length rows")
    return Gallery(ids, vectors)


def gallery_from_records(records: EmbeddingRecords) -> Gallery:
    return build_gallery(records.ids, records.vectors)


def _check_k(g: Gallery, k: int) -> None:
    if not 1 <= k <= len(g):
        raise ValueError(f"k={k} outside [1, {len(g)}]")


def top_k(g: Gallery, q, k: int) -> QueryResult:
    """Exact ``k`` most similar gallery items to a single query."""
    _check_k(g, k)
    q = g._check_queries(q)
    if len(q) != 1:
        raise ValueError("top_k takes a single query vector")
    return g._topk_block(q, k)[0]


def top_k_batch(g: Gallery, queries, k: int, workers: int = 1) -> list[QueryResult]:
    """:func:`top_k` for many queries, split over ``workers`` threads.

    The output is identical to calling :func:`top_k` per query.
    """
    _check_k(g, k)
    q = g._check_queries(queries) if len(queries) else np.empty((0, g.dim))
    blocks = g._map_blocks(lambda block: g._topk_block(block, k), q, workers)
    return [r for block in blocks for r in block]


def subset(g: Gallery, ids: Iterable[str]) -> Gallery:
    return g.subset(ids)


# -- binary file format ---------------------------------------------------------


def write_embeddings(records: EmbeddingRecords, path) -> None:
    """Write little-endian ``GAMAEMB1`` records atomically."""
    vectors = np.ascontiguousarray(records.vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(records.ids):
        raise ValueError("vectors must be an (n, dim) array matching the ids")
    chunks = [_HEADER.pack(MAGIC, vectors.shape[1], len(records.ids), 1 if records.normalized else 0)]
    for rid, vec in zip(records.ids, vectors):
        raw = rid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"id too long: {rid[:40]!r}...")
        chunks.append(_ID_LEN.pack(len(raw)))
        chunks.append(raw)
        chunks.append(vec.tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def read_header(path) -> tuple[int, int, bool]:
    """``(dim, count, normalized)`` from the file header."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    return _parse_header(head)


def _parse_header(head: bytes) -> tuple[int, int, bool]:
    if len(head) < _HEADER.size or head[:8] != MAGIC:
        raise EmbeddingFormatError("bad magic")
    _, dim, count, flag = _HEADER.unpack(head[: _HEADER.size])
    if flag not in (0, 1):
        raise EmbeddingFormatError(f"bad normalization flag {flag}")
    if dim == 0:
        raise EmbeddingFormatError("zero dimension")
    return dim, count, bool(flag)


def read_embeddings(path) -> EmbeddingRecords:
    data = Path(path).read_bytes()
    dim, count, normalized = _parse_header(data)
    vec_bytes = 4 * dim
    ids = []
    vectors = np.empty((count, dim), dtype=np.float32)
    pos = _HEADER.size
    for i in range(count):
        if pos + 2 > len(data):
            raise EmbeddingFormatError(f"count/size mismatch: file ends before record {i} of {count}")
        (n,) = _ID_LEN.unpack_from(data, pos)
        pos += 2
        if pos + n + vec_bytes > len(data):
            raise EmbeddingFormatError(f"count/size mismatch: record {i} truncated")
        try:
            ids.append(data[pos : pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise EmbeddingFormatError(f"record {i}: id is not valid UTF-8") from None
        pos += n
        vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += vec_bytes
    if pos != len(data):
        raise EmbeddingFormatError(f"count/size mismatch: {len(data) - pos} trailing bytes")
    if not np.all(np.isfinite(vectors)):
        bad = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
        raise EmbeddingFormatError(f"non-finite value in record {bad} ({ids[bad]!r})")
    return EmbeddingRecords(tuple(ids), vectors, normalized)

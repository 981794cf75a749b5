"""Exact cosine-similarity retrieval over an immutable reference index.

Databases here are desk-scale (<= 1e5 vectors), so search is exhaustive:
one matrix-vector product plus a full sort. `brute_force_topk` is a separate
per-record implementation kept as the reference semantics for `query`.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import Embedding, EncoderSpec
from .errors import CorruptIndex, DimMismatch, DuplicateId, EmptyIndex, InvalidInput

MAGIC = b"RASRIDX1"


@dataclass(frozen=True)
class ReferenceRecord:
    id: int
    category: str
    path: str
    embedding: np.ndarray  # float32, unit norm


@dataclass(frozen=True)
class RankedHit:
    id: int
    category: str
    path: str
    similarity: float


class ReferenceIndex:
    """Immutable searchable collection of reference records.

    Scoring uses a float64 copy of the stored float32 vectors so that `query`
    and `brute_force_topk` evaluate identical dot products.
    """

    def __init__(self, dim: int, records: Sequence[ReferenceRecord],
                 encoder_spec: Optional[EncoderSpec] = None):
        self.dim = int(dim)
        self.records = tuple(records)
        self.encoder_spec = encoder_spec
        self._ids = np.array([r.id for r in self.records], dtype=np.uint64)
        if len(self.records):
            self._matrix = np.stack([r.embedding for r in self.records]).astype(np.float64)
        else:
            self._matrix = np.zeros((0, self.dim), dtype=np.float64)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReferenceIndex):
            return NotImplemented
        if self.dim != other.dim or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if (a.id, a.category, a.path) != (b.id, b.category, b.path):
                return False
            if a.embedding.tobytes() != b.embedding.tobytes():
                return False
        return True


def _as_query_vector(q) -> np.ndarray:
    vec = q.vector if isinstance(q, Embedding) else q
    return np.asarray(vec, dtype=np.float64).reshape(-1)


def build_index(records: Sequence[ReferenceRecord],
                encoder_spec: Optional[EncoderSpec] = None,
                dim: Optional[int] = None) -> ReferenceIndex:
    """Build an immutable index; iteration order is insertion order."""
    if dim is None:
        if encoder_spec is not None:
            dim = encoder_spec.dim
        elif records:
            dim = int(records[0].embedding.shape[0])
        else:
            raise InvalidInput("cannot infer dimension of an empty index; pass dim=")
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise DuplicateId(f"duplicate record id {rec.id}")
        seen.add(rec.id)
        if rec.embedding.shape != (dim,):
            raise DimMismatch(
                f"record {rec.id}: embedding dim {rec.embedding.shape} != index dim {dim}"
            )
        norm = float(np.linalg.norm(rec.embedding.astype(np.float64)))
        if abs(norm - 1.0) > 1e-3:
            raise InvalidInput(f"record {rec.id}: embedding norm {norm:.6f} is not 1")
    return ReferenceIndex(dim, records, encoder_spec)


def query(index: ReferenceIndex, q, k: int,
          category: Optional[str] = None) -> list[RankedHit]:
    """Top-k records by cosine similarity, ties broken by ascending id.

    With unit-norm vectors the similarity is a plain dot product. An optional
    category filter restricts the candidate set before ranking.
    """
    if len(index) == 0:
        raise EmptyIndex("query against an empty index")
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    vec = _as_query_vector(q)
    if vec.shape[0] != index.dim:
        raise DimMismatch(f"query dim {vec.shape[0]} != index dim {index.dim}")

    sims = index._matrix @ vec
    ids = index._ids
    if category is not None:
        mask = np.array([r.category == category for r in index.records], dtype=bool)
        if not mask.any():
            raise EmptyIndex(f"no records with category {category!r}")
        candidates = np.nonzero(mask)[0]
    else:
        candidates = np.arange(len(index))

    # primary key: similarity descending; secondary: id ascending
    order = candidates[np.lexsort((ids[candidates], -sims[candidates]))]
    top = order[: min(k, len(candidates))]
    return [
        RankedHit(
            id=int(index.records[i].id),
            category=index.records[i].category,
            path=index.records[i].path,
            similarity=float(sims[i]),
        )
        for i in top
    ]


def brute_force_topk(records: Sequence[ReferenceRecord], q, k: int) -> list[RankedHit]:
    """Reference semantics for `query`: per-record dot products, full sort."""
    if len(records) == 0:
        raise EmptyIndex("brute force search over no records")
    if k < 1:
        raise InvalidInput(f"k must be >= 1, got {k}")
    vec = _as_query_vector(q)
    if vec.shape[0] != records[0].embedding.shape[0]:
        raise DimMismatch("query dimension does not match records")
    scored = []
    for rec in records:
        sim = float(np.dot(rec.embedding.astype(np.float64), vec))
        scored.append((rec, sim))
    scored.sort(key=lambda pair: (-pair[1], pair[0].id))
    return [
        RankedHit(id=int(r.id), category=r.category, path=r.path, similarity=s)
        for r, s in scored[: min(k, len(scored))]
    ]


def save_index(index: ReferenceIndex, path: str) -> None:
    """Write the bit-exact index file format.

    Layout: magic "RASRIDX1" | u32 LE dim | u64 LE count | per record:
    u64 LE id, u32 LE length + UTF-8 category, u32 LE length + UTF-8 path,
    dim x f32 LE embedding.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", index.dim))
        fh.write(struct.pack("<Q", len(index)))
        for rec in index.records:
            fh.write(struct.pack("<Q", rec.id))
            for text in (rec.category, rec.path):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(rec.embedding.astype("<f4").tobytes())


def load_index(path: str) -> ReferenceIndex:
    """Read an index file; any structural inconsistency raises CorruptIndex."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptIndex(f"cannot read index file {path}: {exc}") from exc

    def take(offset, n):
        if offset + n > len(blob):
            raise CorruptIndex(f"truncated index file {path}")
        return blob[offset : offset + n], offset + n

    chunk, off = take(0, len(MAGIC))
    if chunk != MAGIC:
        raise CorruptIndex(f"bad magic in {path}: {chunk!r}")
    chunk, off = take(off, 4)
    dim = struct.unpack("<I", chunk)[0]
    if dim == 0:
        raise CorruptIndex(f"zero dimension in {path}")
    chunk, off = take(off, 8)
    count = struct.unpack("<Q", chunk)[0]

    records = []
    for _ in range(count):
        chunk, off = take(off, 8)
        rec_id = struct.unpack("<Q", chunk)[0]
        texts = []
        for _ in range(2):
            chunk, off = take(off, 4)
            length = struct.unpack("<I", chunk)[0]
            chunk, off = take(off, length)
            try:
                texts.append(chunk.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise CorruptIndex(f"bad UTF-8 string in {path}") from exc
        chunk, off = take(off, 4 * dim)
        vec = np.frombuffer(chunk, dtype="<f4").copy()
        records.append(ReferenceRecord(rec_id, texts[0], texts[1], vec))
    if off != len(blob):
        raise CorruptIndex(f"{len(blob) - off} trailing bytes in {path}")
    try:
        return build_index(records, dim=dim)
    except (DuplicateId, DimMismatch, InvalidInput) as exc:
        raise CorruptIndex(f"inconsistent records in {path}: {exc}") from exc


def benchmark_query(index: ReferenceIndex, n_queries: int, k: int = 1,
                    seed: int = 0) -> dict:
    """Wall-clock latency of top-k queries over random unit vectors.

    Returns mean/p50/p99 in milliseconds.
    """
    if len(index) == 0:
        raise EmptyIndex("cannot benchmark an empty index")
    rng = np.random.default_rng(seed)
    latencies = []
    for _ in range(n_queries):
        q = rng.standard_normal(index.dim)
        q /= np.linalg.norm(q)
        start = time.perf_counter()
        query(index, q, k)
        latencies.append((time.perf_counter() - start) * 1000.0)
    arr = np.asarray(latencies)
    return {
        "n_queries": int(n_queries),
        "records": len(index),
        "k": int(k),
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p99_ms": float(np.percentile(arr, 99)),
    }

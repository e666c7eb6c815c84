"""Remediation knowledge store: sparse (BM25) and dense (vector) retrieval.

Documents are chunked at paragraph boundaries when they exceed a token
budget, so prompt packing downstream can work at sub-document
granularity.  Both indexes are immutable after ingest and rebuilt
deterministically from the stored chunks, which makes persistence a
lossless round-trip.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestError
from .ingest import RegexTokenizer, Tokenizer

DOC_KINDS = ("qa_record", "manual", "case_study")
CHUNK_TOKEN_LIMIT = 512
EMBED_DIM = 512
BM25_K1 = 1.2
BM25_B = 0.75

_tok = RegexTokenizer()


def _terms(text: str) -> list[str]:
    return [t.lower() for t in _tok.split(text)]


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    kind: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if self.kind not in DOC_KINDS:
            raise ValueError(f"kind must be one of {DOC_KINDS}, got {self.kind!r}")
        if not self.body:
            raise ValueError("body must be non-empty")


@dataclass(frozen=True)
class Chunk:
    """One retrievable unit: a whole small doc, or a paragraph-bounded slice."""

    doc_id: str
    ordinal: int
    kind: str
    title: str
    text: str
    token_count: int

    @property
    def chunk_id(self) -> str:
        return f"{self.doc_id}#{self.ordinal}"


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float

    @property
    def doc_id(self) -> str:
        return self.chunk.doc_id

    @property
    def chunk_id(self) -> str:
        return self.chunk.chunk_id


def chunk_doc(doc: KnowledgeDoc, limit: int = CHUNK_TOKEN_LIMIT, tok: Tokenizer | None = None) -> list[Chunk]:
    """Split an oversized doc at blank-line paragraph boundaries.

    Paragraphs are greedily packed; a single paragraph larger than the
    limit becomes its own chunk rather than being split mid-paragraph.
    """
    tok = tok or _tok
    total = tok.count(doc.body)
    if total <= limit:
        return [Chunk(doc.doc_id, 0, doc.kind, doc.title, doc.body, total)]
    paragraphs = [p for p in doc.body.split("\n\n") if p.strip()]
    chunks: list[Chunk] = []
    current: list[str] = []
    current_tokens = 0
    for para in paragraphs:
        ptokens = tok.count(para)
        if current and current_tokens + ptokens > limit:
            text = "\n\n".join(current)
            chunks.append(Chunk(doc.doc_id, len(chunks), doc.kind, doc.title, text, tok.count(text)))
            current, current_tokens = [], 0
        current.append(para)
        current_tokens += ptokens
    if current:
        text = "\n\n".join(current)
        chunks.append(Chunk(doc.doc_id, len(chunks), doc.kind, doc.title, text, tok.count(text)))
    return chunks


# -- sparse index -------------------------------------------------------


class SparseIndex:
    """Classic BM25 over an inverted index (k1=1.2, b=0.75)."""

    def __init__(self, chunks: list[Chunk], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.chunks = list(chunks)
        self.doc_lengths: list[int] = []
        # term -> list of (chunk index, term frequency), chunk order = id order
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for idx, chunk in enumerate(self.chunks):
            terms = _terms(chunk.text)
            self.doc_lengths.append(len(terms))
            freqs: dict[str, int] = {}
            for t in terms:
                freqs[t] = freqs.get(t, 0) + 1
            for t, f in freqs.items():
                self.postings.setdefault(t, []).append((idx, f))
        self.avg_length = (sum(self.doc_lengths) / len(self.doc_lengths)) if self.doc_lengths else 0.0

    def idf(self, term: str) -> float:
        n = len(self.chunks)
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score(self, query_terms: list[str], idx: int) -> float:
        """Brute-force BM25 of one chunk; search() agrees with this."""
        freqs: dict[str, int] = {}
        for t in _terms(self.chunks[idx].text):
            freqs[t] = freqs.get(t, 0) + 1
        dl = self.doc_lengths[idx]
        score = 0.0
        for term in query_terms:
            tf = freqs.get(term, 0)
            if tf == 0:
                continue
            norm = tf * (self.k1 + 1) / (tf + self.k1 * (1 - self.b + self.b * dl / self.avg_length))
            score += self.idf(term) * norm
        return score

    def search(self, query: str, k: int) -> list[ScoredChunk]:
        query_terms = _terms(query)
        if not query_terms or not self.chunks:
            return []
        scores: dict[int, float] = {}
        for term in query_terms:
            postings = self.postings.get(term)
            if not postings:
                continue
            idf = self.idf(term)
            for idx, tf in postings:
                dl = self.doc_lengths[idx]
                norm = tf * (self.k1 + 1) / (tf + self.k1 * (1 - self.b + self.b * dl / self.avg_length))
                scores[idx] = scores.get(idx, 0.0) + idf * norm
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], self.chunks[kv[0]].chunk_id))
        return [ScoredChunk(self.chunks[i], s) for i, s in ranked[:k]]


# -- dense index --------------------------------------------------------


class HashedBowEmbedder:
    """Deterministic hashed bag-of-words embedding, L2-normalized.

    Term buckets come from a keyed blake2b digest, never the process
    hash, so vectors are stable across runs and machines.
    """

    name = "hashed-bow-512"

    def __init__(self, dim: int = EMBED_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def _bucket(self, term: str) -> int:
        digest = hashlib.blake2b(term.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for term in _terms(text):
            vec[self._bucket(term)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class DenseIndex:
    """Exact cosine nearest-neighbor search over embedded chunks."""

    def __init__(self, chunks: list[Chunk], embedder=None):
        self.embedder = embedder or HashedBowEmbedder()
        self.chunks = list(chunks)
        if self.chunks:
            rows = [self.embedder(c.text) for c in self.chunks]
            self.vectors = np.asarray(rows, dtype=np.float32)
        else:
            self.vectors = np.zeros((0, getattr(self.embedder, "dim", EMBED_DIM)), dtype=np.float32)

    def search(self, query: str, k: int) -> list[ScoredChunk]:
        if not self.chunks:
            return []
        q = np.asarray(self.embedder(query), dtype=np.float64)
        qnorm = np.linalg.norm(q)
        if qnorm == 0:
            return []
        q /= qnorm
        # Stored rows are float32; renormalize in float64 so an exact
        # text match scores 1.0 to machine precision.
        mat = self.vectors.astype(np.float64)
        norms = np.linalg.norm(mat, axis=1)
        norms[norms == 0] = 1.0
        sims = (mat / norms[:, None]) @ q
        order = sorted(range(len(self.chunks)), key=lambda i: (-sims[i], self.chunks[i].chunk_id))
        return [ScoredChunk(self.chunks[i], float(sims[i])) for i in order[:k]]


# -- store --------------------------------------------------------------


class KnowledgeStore:
    """Immutable chunked corpus with both retrieval indexes built."""

    def __init__(self, chunks: list[Chunk], embedder=None, k1: float = BM25_K1, b: float = BM25_B):
        self.chunks = sorted(chunks, key=lambda c: c.chunk_id)
        self.sparse = SparseIndex(self.chunks, k1=k1, b=b)
        self.dense = DenseIndex(self.chunks, embedder=embedder)

    def __len__(self) -> int:
        return len(self.chunks)

    def sparse_search(self, query: str, k: int) -> list[ScoredChunk]:
        return self.sparse.search(query, k)

    def dense_search(self, query: str, k: int) -> list[ScoredChunk]:
        return self.dense.search(query, k)


def ingest(docs: list[KnowledgeDoc], embedder=None) -> KnowledgeStore:
    """Chunk and index a corpus.  Re-ingesting the same docs is idempotent."""
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise IngestError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    chunks: list[Chunk] = []
    for doc in docs:
        chunks.extend(chunk_doc(doc))
    return KnowledgeStore(chunks, embedder=embedder)


def load_docs_jsonl(path: str | Path) -> list[KnowledgeDoc]:
    """One JSON object per line: {"doc_id", "kind", "title", "body"}."""
    docs = []
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read knowledge file {path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            docs.append(
                KnowledgeDoc(
                    doc_id=obj["doc_id"],
                    kind=obj["kind"],
                    title=obj.get("title", ""),
                    body=obj["body"],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"bad knowledge record at {path}:{lineno}: {exc}") from exc
    return docs


# -- persistence --------------------------------------------------------

_DENSE_MAGIC = b"KBDV"


def save_store(store: KnowledgeStore, directory: str | Path) -> None:
    """Write sparse.json (chunks + BM25 params) and dense.bin (vectors)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sparse_payload = {
        "k1": store.sparse.k1,
        "b": store.sparse.b,
        "embedder": getattr(store.dense.embedder, "name", "custom"),
        "chunks": [
            {
                "doc_id": c.doc_id,
                "ordinal": c.ordinal,
                "kind": c.kind,
                "title": c.title,
                "text": c.text,
                "token_count": c.token_count,
            }
            for c in store.chunks
        ],
    }
    (directory / "sparse.json").write_text(
        json.dumps(sparse_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    vectors = store.dense.vectors
    with open(directory / "dense.bin", "wb") as fh:
        fh.write(_DENSE_MAGIC)
        fh.write(struct.pack("<II", vectors.shape[1] if vectors.ndim == 2 else 0, vectors.shape[0]))
        fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())


def load_store(directory: str | Path, embedder=None) -> KnowledgeStore:
    directory = Path(directory)
    try:
        payload = json.loads((directory / "sparse.json").read_text(encoding="utf-8"))
        blob = (directory / "dense.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot load knowledge store from {directory}: {exc}") from exc
    if blob[:4] != _DENSE_MAGIC:
        raise IngestError(f"{directory}/dense.bin is not a dense index file")
    dim, rows = struct.unpack("<II", blob[4:12])
    vectors = np.frombuffer(blob[12:], dtype="<f4")
    if vectors.size != dim * rows:
        raise IngestError("dense.bin vector block does not match its header")
    chunks = [
        Chunk(
            doc_id=c["doc_id"],
            ordinal=c["ordinal"],
            kind=c["kind"],
            title=c["title"],
            text=c["text"],
            token_count=c["token_count"],
        )
        for c in payload["chunks"]
    ]
    if rows != len(chunks):
        raise IngestError("dense.bin row count does not match sparse.json chunk list")
    store = KnowledgeStore(chunks, embedder=embedder, k1=payload["k1"], b=payload["b"])
    stored = vectors.reshape(rows, dim) if rows else np.zeros((0, dim), dtype="<f4")
    if rows and not np.array_equal(store.dense.vectors, stored):
        # Embedder mismatch means dense scores would silently change.
        raise IngestError("stored vectors disagree with the configured embedder")
    return store

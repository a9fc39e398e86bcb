"""Path ranking: exact dense cosine top-k and Okapi BM25 over path or description text."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import KnowledgePath, PathCorpus
from .textutil import tokenize

MODES = ("dense_path", "dense_description", "bm25_path", "bm25_description")


class RetrievalError(ValueError):
    """Raised on index/corpus mismatches and invalid retrieval inputs."""


@dataclass
class RetrieverConfig:
    k: int = 5
    retriever: str = "dense_path"
    bm25_k1: float = 1.2
    bm25_b: float = 0.75

    def __post_init__(self):
        if self.k < 1:
            raise RetrievalError("k must be >= 1")
        if self.retriever not in MODES:
            raise RetrievalError(f"unknown retriever {self.retriever!r}; choose from {MODES}")


@dataclass
class RetrievalResult:
    query: str
    ranked: list[tuple[KnowledgePath, float]]
    retriever: RetrieverConfig


@dataclass
class VectorIndex:
    path_ids: list[str]
    vectors: np.ndarray  # shape (n, dim), float32
    mode: str  # path_text | description_text
    embedder_id: str
    corpus_hash: str

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1]) if self.vectors.size else 0

    def __len__(self) -> int:
        return len(self.path_ids)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise RetrievalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise RetrievalError("non-finite vector component")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise RetrievalError("cosine is undefined for an all-zero vector")
    return float(np.dot(a, b) / (na * nb))


def build_index(
    entries: list[tuple[str, str]],
    embedder,
    mode: str,
    corpus_hash: str,
    batch_size: int = 64,
) -> VectorIndex:
    """Embed (path_id, text) entries in corpus order, batched."""
    path_ids = [pid for pid, _ in entries]
    texts = [text for _, text in entries]
    rows: list[list[float]] = []
    for start in range(0, len(texts), batch_size):
        rows.extend(embedder.embed(texts[start : start + batch_size]))
    dims = {len(r) for r in rows}
    if len(dims) > 1:
        raise RetrievalError(f"dimension drift across batches: {sorted(dims)}")
    vectors = np.asarray(rows, dtype=np.float32) if rows else np.zeros((0, 0), np.float32)
    return VectorIndex(
        path_ids=path_ids,
        vectors=vectors,
        mode=mode,
        embedder_id=embedder.embedder_id,
        corpus_hash=corpus_hash,
    )


def save_index(index: VectorIndex, path: str) -> None:
    header = {
        "dim": index.dim,
        "count": len(index.path_ids),
        "mode": index.mode,
        "embedder_id": index.embedder_id,
        "corpus_hash": index.corpus_hash,
        "path_ids": index.path_ids,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())


def load_index(path: str, expected_corpus_hash: str | None = None) -> VectorIndex:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RetrievalError(f"corrupt index header in {path}") from exc
    count, dim = header["count"], header["dim"]
    expected_bytes = count * dim * 4
    if len(blob) != expected_bytes:
        raise RetrievalError(
            f"corrupt index payload in {path}: {len(blob)} bytes, expected {expected_bytes}"
        )
    if expected_corpus_hash is not None and header["corpus_hash"] != expected_corpus_hash:
        raise RetrievalError(
            f"index built against corpus {header['corpus_hash']}, "
            f"current corpus is {expected_corpus_hash}"
        )
    vectors = np.frombuffer(blob, dtype="<f4").reshape(count, dim).copy()
    return VectorIndex(
        path_ids=header["path_ids"],
        vectors=vectors,
        mode=header["mode"],
        embedder_id=header["embedder_id"],
        corpus_hash=header["corpus_hash"],
    )


def _take_topk(
    scored: list[tuple[KnowledgePath, float]], k: int
) -> list[tuple[KnowledgePath, float]]:
    # Ties broken by serialized path, ascending, for deterministic output.
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0].serialized()))
    return ordered[:k]


def _dense_scores(query: str, index: VectorIndex, embedder) -> np.ndarray:
    if len(index) == 0:
        raise RetrievalError("empty index")
    if embedder.embedder_id != index.embedder_id:
        raise RetrievalError(
            f"index embedded by {index.embedder_id!r}, query embedder is "
            f"{embedder.embedder_id!r}"
        )
    q = np.asarray(embedder.embed([query])[0], dtype=np.float64)
    if q.shape[0] != index.dim:
        raise RetrievalError(f"query dim {q.shape[0]} != index dim {index.dim}")
    mat = index.vectors.astype(np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise RetrievalError("cosine is undefined for an all-zero vector")
    # Row-wise dots keep summation order identical to the scalar cosine,
    # so exhaustive-sort oracles can demand bit-exact score equality.
    scores = np.empty(len(mat))
    for i, row in enumerate(mat):
        rn = np.linalg.norm(row)
        if rn == 0.0:
            raise RetrievalError("cosine is undefined for an all-zero vector")
        scores[i] = np.dot(q, row) / (qn * rn)
    return scores


def retrieve_paths(
    query: str, index: VectorIndex, corpus: PathCorpus, embedder, cfg: RetrieverConfig
) -> RetrievalResult:
    """Baseline dense retrieval: cosine between the query and raw path text."""
    if index.mode != "path_text":
        raise RetrievalError(f"expected a path_text index, got {index.mode!r}")
    by_id = corpus.by_id()
    scores = _dense_scores(query, index, embedder)
    scored = [(by_id[pid], float(s)) for pid, s in zip(index.path_ids, scores)]
    return RetrievalResult(query=query, ranked=_take_topk(scored, cfg.k), retriever=replace(cfg))


def retrieve_descriptions(
    query: str,
    index: VectorIndex,
    corpus: PathCorpus,
    store,
    embedder,
    cfg: RetrieverConfig,
) -> RetrievalResult:
    """Description-proxy retrieval: score against descriptions, return the paths."""
    if index.mode != "description_text":
        raise RetrievalError(f"expected a description_text index, got {index.mode!r}")
    missing = [pid for pid in index.path_ids if pid not in store.entries]
    if missing:
        raise RetrievalError(f"no description for indexed path_ids: {missing[:10]}")
    by_id = corpus.by_id()
    scores = _dense_scores(query, index, embedder)
    scored = [(by_id[pid], float(s)) for pid, s in zip(index.path_ids, scores)]
    return RetrievalResult(query=query, ranked=_take_topk(scored, cfg.k), retriever=replace(cfg))


@dataclass
class Bm25Stats:
    doc_tokens: list[Counter] = field(default_factory=list)
    doc_lens: list[int] = field(default_factory=list)
    idf: dict[str, float] = field(default_factory=dict)
    avgdl: float = 0.0


def _bm25_stats(texts: list[str]) -> Bm25Stats:
    doc_tokens = [Counter(tokenize(t)) for t in texts]
    doc_lens = [sum(c.values()) for c in doc_tokens]
    n = len(texts)
    df: Counter = Counter()
    for counts in doc_tokens:
        df.update(counts.keys())
    # Smoothed IDF: ln(1 + (N - df + 0.5)/(df + 0.5)); non-negative by construction.
    idf = {t: math.log(1.0 + (n - d + 0.5) / (d + 0.5)) for t, d in df.items()}
    avgdl = sum(doc_lens) / n if n else 0.0
    return Bm25Stats(doc_tokens=doc_tokens, doc_lens=doc_lens, idf=idf, avgdl=avgdl)


def bm25_score(query: str, stats: Bm25Stats, doc_idx: int, k1: float, b: float) -> float:
    counts = stats.doc_tokens[doc_idx]
    dl = stats.doc_lens[doc_idx]
    norm = k1 * (1.0 - b + b * dl / stats.avgdl) if stats.avgdl else k1
    score = 0.0
    for term in tokenize(query):
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        score += stats.idf[term] * tf * (k1 + 1.0) / (tf + norm)
    return score


def bm25_topk(
    query: str,
    entries: list[tuple[str, str]],
    corpus: PathCorpus,
    cfg: RetrieverConfig,
) -> RetrievalResult:
    """Okapi BM25 over (path_id, text) entries with the shared tie-break rule."""
    if not entries:
        raise RetrievalError("empty corpus")
    by_id = corpus.by_id()
    stats = _bm25_stats([text for _, text in entries])
    scored = [
        (by_id[pid], bm25_score(query, stats, i, cfg.bm25_k1, cfg.bm25_b))
        for i, (pid, _) in enumerate(entries)
    ]
    return RetrievalResult(query=query, ranked=_take_topk(scored, cfg.k), retriever=replace(cfg))

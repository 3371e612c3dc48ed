"""Answer retrieval over a loaded phrase index.

Four strategies share one scoring core: exact scan, sparse-first (restrict to
the top sparse documents), dense-first (IVF over start rows, then best-end
expansion), and hybrid (union of both candidate lists, reranked).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .corpus import SpanRef, tokenize
from .dense import QueryDenseVector, question_dense
from .sparse import SparseVector, retrieve_top_docs, sparse_score

if TYPE_CHECKING:
    from .index import PhraseIndex

STRATEGIES = ("exact", "sfs", "dfs", "hybrid")


@dataclass
class SearchConfig:
    strategy: str = "hybrid"
    top_k: int = 10
    sparse_top_docs: int = 5  # documents kept by the sparse-first stage
    dense_top_starts: int = 1000  # start vectors kept by the dense-first stage
    nprobe: int = 64  # IVF cells probed
    sparse_scale: float = 0.05  # weight on the sparse score in the total

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if min(self.top_k, self.sparse_top_docs, self.dense_top_starts, self.nprobe) < 1:
            raise ValueError("all count parameters must be >= 1")
        if self.sparse_scale < 0:
            raise ValueError("sparse_scale must be >= 0")


@dataclass
class QueryVector:
    """Question embedding: dense (start, end, coherency) plus a sparse vector."""

    dense: QueryDenseVector
    sparse: SparseVector


@dataclass
class SearchResult:
    text: str
    span: SpanRef
    score: float  # dense_score + sparse_scale * sparse_score
    dense_score: float
    sparse_score: float  # unscaled
    doc_title: str
    strategy: str


@dataclass
class SearchOutput:
    results: list[SearchResult]
    visited_doc_ordinals: frozenset[int]
    strategy: str

    @property
    def docs_visited(self) -> int:
        return len(self.visited_doc_ordinals)


def embed_question(index: "PhraseIndex", text: str) -> QueryVector:
    """Embed question text with the index's own encoder and tf-idf model."""
    if index.encoder is None:
        raise RuntimeError(
            "index was built with precomputed embeddings; construct the "
            "QueryVector from a precomputed question embedding instead"
        )
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("empty question")
    dense = question_dense(index.encoder.encode_question(tokens))
    return QueryVector(dense=dense, sparse=index.tfidf.embed(tokens))


# ---------------------------------------------------------------------------
# Shared scoring core
# ---------------------------------------------------------------------------


@dataclass
class _Candidates:
    doc: np.ndarray
    para: np.ndarray
    i: np.ndarray
    j: np.ndarray
    rec: np.ndarray
    total: np.ndarray
    dense: np.ndarray
    sparse_raw: np.ndarray

    @staticmethod
    def empty() -> "_Candidates":
        z = np.empty(0, dtype=np.int64)
        f = np.empty(0, dtype=np.float64)
        return _Candidates(z, z, z, z, z, f, f, f)

    @staticmethod
    def concat(parts: list["_Candidates"]) -> "_Candidates":
        if not parts:
            return _Candidates.empty()
        return _Candidates(
            *(np.concatenate([getattr(p, name) for p in parts])
              for name in ("doc", "para", "i", "j", "rec", "total", "dense", "sparse_raw"))
        )


def _score_paragraph(
    index: "PhraseIndex", query: QueryVector, sparse_scale: float, para_row: int
) -> _Candidates:
    """Score every stored phrase of one paragraph against the query."""
    row = index.para_table[para_row]
    rec_lo = int(row["rec_begin"])
    rec_hi = rec_lo + int(row["n_recs"])
    if rec_hi == rec_lo:
        return _Candidates.empty()
    recs = index.start_records[rec_lo:rec_hi]
    n_ends = recs["n_ends"].astype(np.int64)
    end_lo = int(recs[0]["ends_begin"])
    end_hi = int(recs[-1]["ends_begin"]) + int(recs[-1]["n_ends"])
    if end_hi == end_lo:
        return _Candidates.empty()
    entries = index.end_entries[end_lo:end_hi]

    start_logits = index.dequant_start_rows(slice(rec_lo, rec_hi)) @ query.dense.start
    end_logits = index.dequant_end_rows(entries["row"].astype(np.int64)) @ query.dense.end
    coh = np.asarray(index.coherency[end_lo:end_hi], dtype=np.float64)
    dense = np.repeat(start_logits, n_ends) + end_logits + query.dense.coherency * coh
    sparse_raw = sparse_score(query.sparse, index.para_vector(para_row))
    total = dense + sparse_scale * sparse_raw

    n = dense.shape[0]
    doc_ord = int(row["doc"])
    return _Candidates(
        doc=np.full(n, doc_ord, dtype=np.int64),
        para=np.full(n, int(row["para"]), dtype=np.int64),
        i=np.repeat(recs["tok"].astype(np.int64), n_ends),
        j=entries["tok"].astype(np.int64),
        rec=np.repeat(np.arange(rec_lo, rec_hi, dtype=np.int64), n_ends),
        total=total,
        dense=dense,
        sparse_raw=np.full(n, sparse_raw, dtype=np.float64),
    )


def _top_results(
    index: "PhraseIndex", cand: _Candidates, top_k: int, strategy: str
) -> list[SearchResult]:
    """Rank candidates by total score; ties break on (doc, para, i, j)."""
    order = np.lexsort((cand.j, cand.i, cand.para, cand.doc, -cand.total))[:top_k]
    results = []
    for idx in order:
        ref = SpanRef(
            doc_id=index.doc_id(int(cand.doc[idx])),
            para_idx=int(cand.para[idx]),
            i=int(cand.i[idx]),
            j=int(cand.j[idx]),
        )
        results.append(
            SearchResult(
                text=index.span_text(ref),
                span=ref,
                score=float(cand.total[idx]),
                dense_score=float(cand.dense[idx]),
                sparse_score=float(cand.sparse_raw[idx]),
                doc_title=index.doc_title(int(cand.doc[idx])),
                strategy=strategy,
            )
        )
    return results


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


def exact_search(
    index: "PhraseIndex", query: QueryVector, config: SearchConfig
) -> SearchOutput:
    """Score every stored phrase; the oracle for all approximate strategies."""
    if index.n_phrases == 0:
        raise RuntimeError("empty index")
    parts = [
        _score_paragraph(index, query, config.sparse_scale, k)
        for k in range(len(index.para_table))
    ]
    cand = _Candidates.concat(parts)
    return SearchOutput(
        results=_top_results(index, cand, config.top_k, "exact"),
        visited_doc_ordinals=frozenset(range(index.n_docs)),
        strategy="exact",
    )


def sfs_search(
    index: "PhraseIndex", query: QueryVector, config: SearchConfig
) -> SearchOutput:
    """Sparse-first: exact scoring restricted to the top sparse documents."""
    ranked = retrieve_top_docs(query.sparse, index.postings, config.sparse_top_docs)
    doc_set = frozenset(d for d, _ in ranked)
    parts = [
        _score_paragraph(index, query, config.sparse_scale, k)
        for k in range(len(index.para_table))
        if int(index.para_table[k]["doc"]) in doc_set
    ]
    cand = _Candidates.concat(parts)
    return SearchOutput(
        results=_top_results(index, cand, config.top_k, "sfs"),
        visited_doc_ordinals=doc_set,
        strategy="sfs",
    )


def dfs_search(
    index: "PhraseIndex",
    ivf: "IvfIndex | None",
    query: QueryVector,
    config: SearchConfig,
) -> SearchOutput:
    """Dense-first: probe IVF cells by start score, keep the best start rows,
    then expand each retrieved start over its surviving end window."""
    if ivf is None:
        raise ValueError("missing ivf section: build the index with build_ivf=True")
    n_clusters = ivf.centroids.shape[0]
    nprobe = min(config.nprobe, n_clusters)
    cluster_scores = ivf.centroids @ query.dense.start
    probe = np.lexsort((np.arange(n_clusters), -cluster_scores))[:nprobe]
    cand_rows = (
        np.concatenate([ivf.lists[int(c)] for c in probe])
        if nprobe
        else np.empty(0, np.int64)
    )
    if cand_rows.size == 0:
        return SearchOutput([], frozenset(), "dfs")
    start_scores = index.dequant_start_rows(cand_rows) @ query.dense.start
    keep = np.lexsort((cand_rows, -start_scores))[: config.dense_top_starts]
    selected = np.sort(cand_rows[keep])

    # Score whole paragraphs (bit-identical to exact_search), then keep only
    # phrases whose start record was retrieved.
    para_rows = sorted(
        {
            index.para_row(int(rec["doc"]), int(rec["para"]))
            for rec in index.start_records[selected]
        }
    )
    parts = []
    for k in para_rows:
        cand = _score_paragraph(index, query, config.sparse_scale, k)
        mask = np.isin(cand.rec, selected)
        parts.append(
            _Candidates(
                cand.doc[mask], cand.para[mask], cand.i[mask], cand.j[mask],
                cand.rec[mask], cand.total[mask], cand.dense[mask], cand.sparse_raw[mask],
            )
        )
    merged = _Candidates.concat(parts)
    visited = frozenset(int(rec["doc"]) for rec in index.start_records[selected])
    return SearchOutput(
        results=_top_results(index, merged, config.top_k, "dfs"),
        visited_doc_ordinals=visited,
        strategy="dfs",
    )


def hybrid_search(
    index: "PhraseIndex",
    ivf: "IvfIndex | None",
    query: QueryVector,
    config: SearchConfig,
) -> SearchOutput:
    """Union of the SFS and DFS candidate lists, deduplicated and reranked."""
    sfs_out = sfs_search(index, query, config)
    dfs_out = dfs_search(index, ivf, query, config)
    by_span: dict[SpanRef, SearchResult] = {}
    for res in [*sfs_out.results, *dfs_out.results]:
        prev = by_span.get(res.span)
        if prev is None:
            by_span[res.span] = res
        else:
            best = res if res.score > prev.score else prev
            by_span[res.span] = SearchResult(
                text=best.text,
                span=best.span,
                score=best.score,
                dense_score=best.dense_score,
                sparse_score=best.sparse_score,
                doc_title=best.doc_title,
                strategy="sfs+dfs",
            )
    merged = sorted(
        by_span.values(),
        key=lambda r: (
            -r.score,
            index.corpus.ordinal(r.span.doc_id),
            r.span.para_idx,
            r.span.i,
            r.span.j,
        ),
    )[: config.top_k]
    return SearchOutput(
        results=merged,
        visited_doc_ordinals=sfs_out.visited_doc_ordinals | dfs_out.visited_doc_ordinals,
        strategy="hybrid",
    )


def run_search(
    index: "PhraseIndex", query: QueryVector, config: SearchConfig
) -> SearchOutput:
    """Dispatch on config.strategy, using the index's own IVF where needed."""
    if config.strategy == "exact":
        return exact_search(index, query, config)
    if config.strategy == "sfs":
        return sfs_search(index, query, config)
    if config.strategy == "dfs":
        return dfs_search(index, index.ivf, query, config)
    return hybrid_search(index, index.ivf, query, config)


# ---------------------------------------------------------------------------
# IVF coarse quantizer
# ---------------------------------------------------------------------------


@dataclass
class IvfIndex:
    """K-means centroids over start rows plus per-cell posting lists."""

    centroids: np.ndarray  # (n_clusters, boundary_dim)
    lists: list[np.ndarray]  # row ids, ascending, one array per cluster


def _assign(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Squared Euclidean distance; the ||rows||^2 term is constant per row.
    d2 = -2.0 * (rows @ centroids.T) + (centroids * centroids).sum(axis=1)[None, :]
    return np.argmin(d2, axis=1)


def kmeans_train(
    rows: np.ndarray,
    n_clusters: int,
    seed: int = 0,
    max_iter: int = 25,
    tol: float = 1e-4,
) -> IvfIndex:
    """Seeded k-means++ init, then Lloyd iterations until the maximum centroid
    shift drops below tol or the iteration cap is reached."""
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if n_clusters > n:
        raise ValueError(f"n_clusters {n_clusters} exceeds row count {n}")
    rng = np.random.default_rng(seed)

    if n_clusters == n:
        centroids = rows.copy()
    else:
        centroids = np.empty((n_clusters, rows.shape[1]), dtype=np.float64)
        centroids[0] = rows[int(rng.integers(n))]
        d2 = ((rows - centroids[0]) ** 2).sum(axis=1)
        for t in range(1, n_clusters):
            total = float(d2.sum())
            if total <= 0.0:
                idx = int(np.argmax(d2))
            else:
                idx = int(rng.choice(n, p=d2 / total))
            centroids[t] = rows[idx]
            d2 = np.minimum(d2, ((rows - centroids[t]) ** 2).sum(axis=1))

    for _ in range(max_iter):
        assign = _assign(rows, centroids)
        new_centroids = centroids.copy()
        for c in range(n_clusters):
            members = rows[assign == c]
            if members.shape[0]:
                new_centroids[c] = members.mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break

    assign = _assign(rows, centroids)
    lists = [np.flatnonzero(assign == c).astype(np.int64) for c in range(n_clusters)]
    return IvfIndex(centroids=centroids, lists=lists)

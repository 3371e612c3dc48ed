"""Hashed 2-gram tf-idf vectors, inverted-index retrieval, and the learned sparse encoder."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import CorpusStore, Document, Paragraph, Token

NGRAM_BINS = 1 << 24  # hashed vocabulary size, ~16.7M bins


def ngram_bin(ngram: str) -> int:
    """Stable 64-bit hash of an n-gram string, folded into the bin space."""
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % NGRAM_BINS


@dataclass
class SparseVector:
    """Sorted (bin, weight) pairs; unit Euclidean norm after normalization, or empty."""

    bins: np.ndarray  # int64, strictly ascending
    weights: np.ndarray  # float64

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @classmethod
    def from_pairs(cls, pairs: dict[int, float]) -> "SparseVector":
        if not pairs:
            return cls.empty()
        bins = np.array(sorted(pairs), dtype=np.int64)
        weights = np.array([pairs[int(b)] for b in bins], dtype=np.float64)
        return cls(bins, weights)

    @property
    def is_empty(self) -> bool:
        return self.bins.size == 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def dot(self, other: "SparseVector") -> float:
        if self.is_empty or other.is_empty:
            return 0.0
        _, ia, ib = np.intersect1d(
            self.bins, other.bins, assume_unique=True, return_indices=True
        )
        if ia.size == 0:
            return 0.0
        return float(np.dot(self.weights[ia], other.weights[ib]))

    def normalized(self) -> "SparseVector":
        """Drop zero weights and scale to unit norm; all-zero input becomes empty."""
        keep = self.weights != 0.0
        bins, weights = self.bins[keep], self.weights[keep]
        n = float(np.linalg.norm(weights))
        if n == 0.0:
            return SparseVector.empty()
        return SparseVector(bins, weights / n)


def sparse_score(q: SparseVector, v: SparseVector) -> float:
    """Dot product over intersecting bins (cosine similarity for unit vectors)."""
    return q.dot(v)


def combine_doc_para(doc_vec: SparseVector, para_vec: SparseVector) -> SparseVector:
    """Bin-wise sum of the two vectors, renormalized to unit norm."""
    if doc_vec.is_empty:
        return para_vec.normalized()
    if para_vec.is_empty:
        return doc_vec.normalized()
    bins = np.union1d(doc_vec.bins, para_vec.bins)
    weights = np.zeros(bins.size, dtype=np.float64)
    weights[np.searchsorted(bins, doc_vec.bins)] += doc_vec.weights
    weights[np.searchsorted(bins, para_vec.bins)] += para_vec.weights
    return SparseVector(bins, weights).normalized()


def _token_groups(unit: Paragraph | Document | Sequence[Token] | Sequence[str]) -> list[list[str]]:
    """Lowercased surfaces, grouped so bigrams never cross paragraph boundaries."""
    if isinstance(unit, Document):
        return [[t.surface.lower() for t in p.tokens] for p in unit.paragraphs]
    if isinstance(unit, Paragraph):
        return [[t.surface.lower() for t in unit.tokens]]
    surfaces = [t.surface if isinstance(t, Token) else t for t in unit]
    return [[s.lower() for s in surfaces]]


def _bin_counts(groups: list[list[str]]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for words in groups:
        for w in words:
            b = ngram_bin(w)
            counts[b] = counts.get(b, 0) + 1
        for w1, w2 in zip(words, words[1:]):
            b = ngram_bin(f"{w1} {w2}")
            counts[b] = counts.get(b, 0) + 1
    return counts


@dataclass
class TfIdfModel:
    """Document frequencies over the hashed unigram/bigram bin space."""

    doc_count: int
    doc_freq: dict[int, int]
    n_bins: int = NGRAM_BINS

    def idf(self, bin_: int) -> float:
        df = self.doc_freq.get(bin_, 0)
        return max(0.0, math.log((self.doc_count - df + 0.5) / (df + 0.5)))

    def embed(self, unit: Paragraph | Document | Sequence[Token] | Sequence[str]) -> SparseVector:
        counts = _bin_counts(_token_groups(unit))
        pairs = {b: tf * self.idf(b) for b, tf in counts.items()}
        return SparseVector.from_pairs(pairs).normalized()

    def digest(self) -> str:
        """Content hash used to tie an index to the model that produced it."""
        h = hashlib.sha256()
        h.update(str(self.doc_count).encode())
        for b in sorted(self.doc_freq):
            h.update(f"{b}:{self.doc_freq[b]};".encode())
        return h.hexdigest()


def fit_tfidf(corpus: CorpusStore) -> TfIdfModel:
    """Count, per hashed unigram/bigram bin, the number of documents containing it."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    df: dict[int, int] = {}
    for doc in corpus:
        for b in _bin_counts(_token_groups(doc)):
            df[b] = df.get(b, 0) + 1
    return TfIdfModel(doc_count=len(corpus), doc_freq=df)


def embed_text_sparse(
    unit: Paragraph | Document | Sequence[Token] | Sequence[str], model: TfIdfModel
) -> SparseVector:
    """tf * idf per bin, idf = ln((N - df + 0.5)/(df + 0.5)) clamped at 0, unit-normalized."""
    return model.embed(unit)


@dataclass
class InvertedIndex:
    """bin -> (doc ordinals ascending, weights); weights match the doc vectors exactly."""

    n_docs: int
    postings: dict[int, tuple[np.ndarray, np.ndarray]]

    def reconstruct_doc_vectors(self) -> list[SparseVector]:
        pairs: list[dict[int, float]] = [{} for _ in range(self.n_docs)]
        for b in sorted(self.postings):
            docs, weights = self.postings[b]
            for d, w in zip(docs, weights):
                pairs[int(d)][b] = float(w)
        return [SparseVector.from_pairs(p) for p in pairs]


def build_inverted_index(doc_vectors: list[SparseVector]) -> InvertedIndex:
    acc: dict[int, tuple[list[int], list[float]]] = {}
    for ord_, vec in enumerate(doc_vectors):
        for b, w in zip(vec.bins, vec.weights):
            docs, weights = acc.setdefault(int(b), ([], []))
            docs.append(ord_)
            weights.append(float(w))
    postings = {
        b: (np.array(docs, dtype=np.int64), np.array(weights, dtype=np.float64))
        for b, (docs, weights) in acc.items()
    }
    return InvertedIndex(n_docs=len(doc_vectors), postings=postings)


def retrieve_top_docs(
    q: SparseVector, index: InvertedIndex, k: int
) -> list[tuple[int, float]]:
    """Top-k documents by sparse score, ties broken by ascending doc ordinal.

    Identical to brute-force scoring of every document; an empty query yields
    an empty result.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if q.is_empty:
        return []
    scores = np.zeros(index.n_docs, dtype=np.float64)
    for b, w in zip(q.bins, q.weights):
        posting = index.postings.get(int(b))
        if posting is not None:
            docs, weights = posting
            scores[docs] += w * weights
    order = np.lexsort((np.arange(index.n_docs), -scores))
    return [(int(d), float(scores[d])) for d in order[:k]]


# ---------------------------------------------------------------------------
# Learned sparse encoder (optional; off by default in the index pipeline)
# ---------------------------------------------------------------------------


@dataclass
class LearnedSparseConfig:
    vocab_size: int
    transform: str = "linear"  # "linear" or "mlp"

    def __post_init__(self) -> None:
        if self.transform not in ("linear", "mlp"):
            raise ValueError(f"unknown transform kind {self.transform!r}")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")


@dataclass
class LinearMap:
    weight: np.ndarray  # (d, d)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T


@dataclass
class TwoLayerMap:
    w1: np.ndarray  # (h, d)
    w2: np.ndarray  # (d, h)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1.T, 0.0) @ self.w2.T


def learned_sparse_encode(
    dense: np.ndarray,
    word_ids: np.ndarray,
    vocab_size: int,
    q_map: Callable[[np.ndarray], np.ndarray],
    k_map: Callable[[np.ndarray], np.ndarray],
) -> list[SparseVector]:
    """ReLU-clipped attention over token encodings, scattered onto word bins.

    Row t of the result holds, for each vocabulary id w, the summed positive
    attention from position t to every position carrying word w. Entries are
    therefore nonnegative, and the result is kept in sparse form (never a
    T x vocab_size dense matrix).
    """
    dense = np.asarray(dense, dtype=np.float64)
    word_ids = np.asarray(word_ids, dtype=np.int64)
    if dense.ndim != 2:
        raise ValueError("dense must be a T x d matrix")
    if word_ids.shape != (dense.shape[0],):
        raise ValueError("shape mismatch: word_ids must have one id per token")
    if word_ids.size and (word_ids.min() < 0 or word_ids.max() >= vocab_size):
        raise ValueError("word id out of vocabulary range")
    transformed_q = q_map(dense)
    transformed_k = k_map(dense)
    if transformed_q.shape != dense.shape or transformed_k.shape != dense.shape:
        raise ValueError("shape mismatch: transforms must preserve T x d shape")
    attn = np.maximum(transformed_q @ transformed_k.T, 0.0)

    order = np.argsort(word_ids, kind="stable")
    sorted_ids = word_ids[order]
    unique_ids, starts = np.unique(sorted_ids, return_index=True)
    rows: list[SparseVector] = []
    for t in range(dense.shape[0]):
        sums = np.add.reduceat(attn[t, order], starts)
        keep = sums != 0.0
        rows.append(SparseVector(unique_ids[keep].copy(), sums[keep].astype(np.float64)))
    return rows


class LearnedSparseEncoder:
    """Paired start/end sparse encoders with a vocabulary built from the corpus.

    Phrase vectors are the concatenation [start_row_i, end_row_j] with end bins
    offset by vocab_size; the question side mirrors the phrase transforms at the
    marker row. Outputs are left unnormalized.
    """

    def __init__(
        self,
        config: LearnedSparseConfig,
        dim: int,
        seed: int = 0,
        hidden: int | None = None,
    ):
        self.config = config
        self.dim = dim
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(dim)

        def make_map() -> LinearMap | TwoLayerMap:
            if config.transform == "linear":
                return LinearMap(rng.normal(0.0, scale, size=(dim, dim)))
            h = hidden or dim
            return TwoLayerMap(
                rng.normal(0.0, scale, size=(h, dim)),
                rng.normal(0.0, 1.0 / math.sqrt(h), size=(dim, h)),
            )

        self.start_q, self.start_k = make_map(), make_map()
        self.end_q, self.end_k = make_map(), make_map()
        self.vocab: dict[str, int] = {}

    @property
    def overflow_id(self) -> int:
        return self.config.vocab_size - 1

    def fit_vocab(self, corpus: CorpusStore) -> None:
        """Assign ids to lowercased corpus words; the last bin catches overflow."""
        words = sorted(
            {t.surface.lower() for d in corpus for p in d.paragraphs for t in p.tokens}
        )
        if len(words) + 1 > self.config.vocab_size:
            raise ValueError(
                f"vocab_size {self.config.vocab_size} too small for "
                f"{len(words)} corpus words plus overflow"
            )
        self.vocab = {w: i for i, w in enumerate(words)}

    def word_ids(self, surfaces: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.vocab.get(s.lower(), self.overflow_id) for s in surfaces],
            dtype=np.int64,
        )

    def encode_rows(
        self, start_dense: np.ndarray, end_dense: np.ndarray, surfaces: Sequence[str]
    ) -> tuple[list[SparseVector], list[SparseVector]]:
        ids = self.word_ids(surfaces)
        starts = learned_sparse_encode(
            start_dense, ids, self.config.vocab_size, self.start_q, self.start_k
        )
        ends = learned_sparse_encode(
            end_dense, ids, self.config.vocab_size, self.end_q, self.end_k
        )
        return starts, ends

    def phrase_vector(
        self, start_rows: list[SparseVector], end_rows: list[SparseVector], i: int, j: int
    ) -> SparseVector:
        s, e = start_rows[i], end_rows[j]
        bins = np.concatenate([s.bins, e.bins + self.config.vocab_size])
        weights = np.concatenate([s.weights, e.weights])
        return SparseVector(bins, weights)

    def question_vector(
        self, start_dense: np.ndarray, end_dense: np.ndarray, surfaces: Sequence[str]
    ) -> SparseVector:
        starts, ends = self.encode_rows(start_dense, end_dense, surfaces)
        return self.phrase_vector(starts, ends, 0, 0)

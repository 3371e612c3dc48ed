"""Independent reference implementations used to check the real code paths.

These deliberately avoid the library's index readers and search functions:
dense vectors are parsed straight out of the binary sections, sparse vectors
are recomputed from the corpus, and scoring/ranking is explicit loops.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from phraseindex.corpus import CorpusStore
from phraseindex.sparse import combine_doc_para, fit_tfidf, ngram_bin


def brute_force_tfidf_weights(texts: list[str], target: str) -> dict[int, float]:
    """Dictionary-based tf-idf over whitespace unigrams and bigrams."""

    def grams(text: str) -> list[str]:
        words = text.lower().split()
        return words + [f"{a} {b}" for a, b in zip(words, words[1:])]

    n = len(texts)
    df: dict[int, int] = {}
    for text in texts:
        for b in {ngram_bin(g) for g in grams(text)}:
            df[b] = df.get(b, 0) + 1
    tf: dict[int, int] = {}
    for g in grams(target):
        b = ngram_bin(g)
        tf[b] = tf.get(b, 0) + 1
    weights = {}
    for b, count in tf.items():
        idf = max(0.0, math.log((n - df.get(b, 0) + 0.5) / (df.get(b, 0) + 0.5)))
        if count * idf != 0.0:
            weights[b] = count * idf
    norm = math.sqrt(sum(w * w for w in weights.values()))
    return {b: w / norm for b, w in weights.items()} if norm else {}


def _read_code_section(path: Path) -> tuple[np.ndarray, int]:
    raw = path.read_bytes()
    assert raw[:4] == b"PIDX"
    n_rows, dim = struct.unpack("<QI", raw[12:24])
    codes = np.frombuffer(raw[24:], dtype=np.int8).reshape(n_rows, dim)
    return codes, dim


def _read_quant_section(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    assert raw[:4] == b"PIDX"
    (dim,) = struct.unpack("<I", raw[12:16])
    arrays = []
    offset = 16
    for _ in range(4):
        arrays.append(np.frombuffer(raw[offset : offset + dim * 8], dtype="<f8").copy())
        offset += dim * 8
    return tuple(arrays)  # start_min, start_scale, end_min, end_scale


def _read_coherency_section(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    assert raw[:4] == b"PIDX"
    (n,) = struct.unpack("<Q", raw[12:20])
    return np.frombuffer(raw[20:], dtype="<f4").astype(np.float64)


def enumerate_all_scores(
    index_dir: Path,
    corpus: CorpusStore,
    max_span: int,
    q_start: np.ndarray,
    q_end: np.ndarray,
    q_coherency: float,
    q_sparse,
    sparse_scale: float,
) -> list[tuple[float, int, int, int, int]]:
    """Score every span of a keep-all build by explicit loops over raw bytes.

    Returns (score, doc_ordinal, para_idx, i, j) tuples in ranked order with
    the (doc, para, i, j) tie-break.
    """
    start_codes, dim = _read_code_section(index_dir / "starts.bin")
    end_codes, _ = _read_code_section(index_dir / "ends.bin")
    s_min, s_scale, e_min, e_scale = _read_quant_section(index_dir / "quant.bin")
    coherency = _read_coherency_section(index_dir / "coherency.bin")
    starts = s_min + (start_codes.astype(np.float64) + 128.0) * s_scale
    ends = e_min + (end_codes.astype(np.float64) + 128.0) * e_scale

    tfidf = fit_tfidf(corpus)
    doc_vecs = [tfidf.embed(doc) for doc in corpus]

    scored = []
    row_base = 0  # keep-all: one start row and one end row per token, in order
    coh_cursor = 0
    for doc_ord, doc, para_idx, para in corpus.iter_paragraphs():
        combined = combine_doc_para(doc_vecs[doc_ord], tfidf.embed(para))
        # Match the on-disk float32 weights the search path consumes.
        combined_f32 = {
            int(b): float(np.float32(w)) for b, w in zip(combined.bins, combined.weights)
        }
        sparse_raw = sum(
            w * combined_f32.get(int(b), 0.0) for b, w in zip(q_sparse.bins, q_sparse.weights)
        )
        n = para.n_tokens
        for i in range(n):
            for j in range(i, min(i + max_span, n)):
                dense = (
                    float(starts[row_base + i] @ q_start)
                    + float(ends[row_base + j] @ q_end)
                    + q_coherency * float(coherency[coh_cursor])
                )
                scored.append(
                    (dense + sparse_scale * sparse_raw, doc_ord, para_idx, i, j)
                )
                coh_cursor += 1
        row_base += n
    scored.sort(key=lambda t: (-t[0], t[1], t[2], t[3], t[4]))
    return scored

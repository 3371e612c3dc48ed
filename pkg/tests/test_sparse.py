"""tf-idf model, sparse vectors, inverted index, and the learned sparse encoder."""

import numpy as np
import pytest

from oracles import brute_force_tfidf_weights as brute_force_tfidf
from phraseindex.corpus import CorpusStore, Document, Paragraph
from phraseindex.sparse import (
    LinearMap,
    SparseVector,
    TwoLayerMap,
    build_inverted_index,
    combine_doc_para,
    embed_text_sparse,
    fit_tfidf,
    learned_sparse_encode,
    ngram_bin,
    retrieve_top_docs,
    sparse_score,
)


def make_corpus(texts: list[str]) -> CorpusStore:
    return CorpusStore(
        [
            Document(id=f"d{k}", title=f"t{k}", paragraphs=[Paragraph.from_text(t)])
            for k, t in enumerate(texts)
        ]
    )


class TestFitTfidf:
    def test_document_frequencies(self):
        model = fit_tfidf(make_corpus(["a b", "a c"]))
        assert model.doc_freq[ngram_bin("a")] == 2
        assert model.doc_freq[ngram_bin("b")] == 1
        assert model.doc_freq[ngram_bin("a b")] == 1

    def test_repeated_term_counts_df_once_but_tf_twice(self):
        corpus = make_corpus(["x x y", "a b c", "d e f"])
        model = fit_tfidf(corpus)
        assert model.doc_freq[ngram_bin("x")] == 1
        vec = embed_text_sparse(corpus.doc("d0"), model)
        weights = dict(zip(vec.bins.tolist(), vec.weights.tolist()))
        # tf("x") = 2 while tf("y") = 1 and both share the same idf.
        assert weights[ngram_bin("x")] == pytest.approx(2 * weights[ngram_bin("y")], rel=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            CorpusStore([])

    def test_hash_collisions_share_a_bin(self):
        # Find two distinct unigrams whose hashes collide in the bin space,
        # then confirm their counts land in one shared bin.
        seen: dict[int, str] = {}
        pair = None
        for k in range(200_000):
            word = f"tok{k}"
            b = ngram_bin(word)
            if b in seen:
                pair = (seen[b], word)
                break
            seen[b] = word
        assert pair is not None, "no collision found in search budget"
        model = fit_tfidf(make_corpus([f"{pair[0]} filler", f"{pair[1]} filler", "other words"]))
        assert model.doc_freq[ngram_bin(pair[0])] == 2  # both docs hit the shared bin


class TestEmbed:
    def test_unit_norm_or_empty(self):
        corpus = make_corpus(["a b c", "a d e", "f g h"])
        model = fit_tfidf(corpus)
        for doc in corpus:
            vec = embed_text_sparse(doc, model)
            assert vec.is_empty or abs(vec.norm() - 1.0) < 1e-6

    def test_term_in_every_doc_gets_zero_weight(self):
        corpus = make_corpus(["common x1 y1", "common x2 y2", "common x3 y3"])
        model = fit_tfidf(corpus)
        vec = embed_text_sparse(corpus.doc("d0"), model)
        assert ngram_bin("common") not in set(vec.bins.tolist())

    def test_empty_text_gives_empty_vector(self):
        corpus = make_corpus(["a b", "c d", "e f"])
        model = fit_tfidf(corpus)
        assert embed_text_sparse(Paragraph.from_text(""), model).is_empty

    def test_matches_brute_force_calculator(self):
        texts = ["red apple pie", "green apple tart", "red rose garden"]
        model = fit_tfidf(make_corpus(texts))
        vec = embed_text_sparse(Paragraph.from_text(texts[0]), model)
        expected = brute_force_tfidf(texts, texts[0])
        got = dict(zip(vec.bins.tolist(), vec.weights.tolist()))
        assert set(got) == set(expected)
        for b in expected:
            assert got[b] == pytest.approx(expected[b], abs=1e-12)

    def test_unigram_tf_order_invariant_but_bigrams_are_not(self):
        corpus = make_corpus(["p q r s", "t u v w", "x y z a"])
        model = fit_tfidf(corpus)
        fwd = embed_text_sparse(Paragraph.from_text("p q"), model)
        rev = embed_text_sparse(Paragraph.from_text("q p"), model)
        fwd_bins = set(fwd.bins.tolist())
        rev_bins = set(rev.bins.tolist())
        assert ngram_bin("p") in fwd_bins and ngram_bin("p") in rev_bins
        assert ngram_bin("q") in fwd_bins and ngram_bin("q") in rev_bins
        assert ngram_bin("p q") in fwd_bins and ngram_bin("p q") not in rev_bins
        assert ngram_bin("q p") in rev_bins and ngram_bin("q p") not in fwd_bins


class TestCombineAndScore:
    def test_combine_with_empty_paragraph(self):
        doc_vec = SparseVector(np.array([3, 9]), np.array([0.6, 0.8]))
        combined = combine_doc_para(doc_vec, SparseVector.empty())
        np.testing.assert_array_equal(combined.bins, doc_vec.bins)
        np.testing.assert_allclose(combined.weights, doc_vec.weights, atol=1e-12)

    def test_combine_equal_vectors_is_identity_after_renorm(self):
        vec = SparseVector(np.array([1, 5]), np.array([0.6, 0.8]))
        combined = combine_doc_para(vec, vec)
        np.testing.assert_allclose(combined.weights, vec.weights, atol=1e-12)

    def test_combine_disjoint_supports(self):
        a = SparseVector(np.array([1]), np.array([1.0]))
        b = SparseVector(np.array([2]), np.array([1.0]))
        combined = combine_doc_para(a, b)
        assert combined.bins.tolist() == [1, 2]
        np.testing.assert_allclose(combined.weights, [2 ** -0.5, 2 ** -0.5])

    def test_self_score_is_one(self):
        vec = SparseVector(np.array([2, 4, 8]), np.array([0.5, 0.5, 0.5]))
        unit = vec.normalized()
        assert sparse_score(unit, unit) == pytest.approx(1.0, abs=1e-6)

    def test_disjoint_score_is_zero(self):
        a = SparseVector(np.array([1, 2]), np.array([0.7, 0.7]))
        b = SparseVector(np.array([3, 4]), np.array([0.7, 0.7]))
        assert sparse_score(a, b) == 0.0

    def test_score_matches_dense_dot(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            bins_a = np.sort(rng.choice(200, size=20, replace=False))
            bins_b = np.sort(rng.choice(200, size=25, replace=False))
            a = SparseVector(bins_a.astype(np.int64), rng.normal(size=20))
            b = SparseVector(bins_b.astype(np.int64), rng.normal(size=25))
            dense_a = np.zeros(200)
            dense_a[a.bins] = a.weights
            dense_b = np.zeros(200)
            dense_b[b.bins] = b.weights
            assert sparse_score(a, b) == pytest.approx(float(dense_a @ dense_b), abs=1e-9)


class TestRetrieveTopDocs:
    @staticmethod
    def _random_setup(rng, n_docs):
        texts = [
            " ".join(rng.choice([f"w{k}" for k in range(50)], size=int(rng.integers(5, 15))))
            for _ in range(n_docs)
        ]
        corpus = make_corpus(texts)
        model = fit_tfidf(corpus)
        doc_vecs = [embed_text_sparse(doc, model) for doc in corpus]
        return model, doc_vecs

    def test_k_at_least_corpus_returns_full_ordering(self):
        rng = np.random.default_rng(3)
        model, doc_vecs = self._random_setup(rng, 10)
        index = build_inverted_index(doc_vecs)
        query = doc_vecs[4]
        ranked = retrieve_top_docs(query, index, 50)
        assert len(ranked) == 10
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_empty_query_returns_nothing(self):
        index = build_inverted_index([SparseVector(np.array([1]), np.array([1.0]))])
        assert retrieve_top_docs(SparseVector.empty(), index, 3) == []

    def test_matches_brute_force_top5(self):
        rng = np.random.default_rng(4)
        model, doc_vecs = self._random_setup(rng, 100)
        index = build_inverted_index(doc_vecs)
        for probe in range(0, 100, 17):
            query = doc_vecs[probe]
            got = retrieve_top_docs(query, index, 5)
            brute = sorted(
                ((d, sparse_score(query, v)) for d, v in enumerate(doc_vecs)),
                key=lambda t: (-t[1], t[0]),
            )[:5]
            assert [d for d, _ in got] == [d for d, _ in brute]
            for (_, a), (_, b) in zip(got, brute):
                assert a == pytest.approx(b, abs=1e-9)

    def test_topk_is_prefix_of_full_ranking(self):
        rng = np.random.default_rng(5)
        model, doc_vecs = self._random_setup(rng, 60)
        index = build_inverted_index(doc_vecs)
        query = embed_text_sparse(Paragraph.from_text("w1 w2 w3 w4"), model)
        full = retrieve_top_docs(query, index, 60)
        for k in (1, 5, 20, 59):
            assert retrieve_top_docs(query, index, k) == full[:k]

    def test_rejects_bad_k(self):
        index = build_inverted_index([SparseVector(np.array([1]), np.array([1.0]))])
        with pytest.raises(ValueError):
            retrieve_top_docs(SparseVector.empty(), index, 0)


def test_inverted_index_reconstruction_is_bit_exact():
    rng = np.random.default_rng(6)
    texts = [
        " ".join(rng.choice([f"w{k}" for k in range(30)], size=10)) for _ in range(40)
    ]
    corpus = make_corpus(texts)
    model = fit_tfidf(corpus)
    doc_vecs = [embed_text_sparse(doc, model) for doc in corpus]
    rebuilt = build_inverted_index(doc_vecs).reconstruct_doc_vectors()
    for orig, back in zip(doc_vecs, rebuilt):
        np.testing.assert_array_equal(orig.bins, back.bins)
        np.testing.assert_array_equal(orig.weights, back.weights)


class TestLearnedSparse:
    def test_zero_transforms_give_zero_output(self):
        rng = np.random.default_rng(7)
        dense = rng.normal(size=(5, 4))
        zero = LinearMap(np.zeros((4, 4)))
        rows = learned_sparse_encode(dense, np.arange(5), 10, zero, zero)
        assert all(r.is_empty for r in rows)

    def test_hand_case_two_by_two(self):
        # Attention matrix [[1, -1], [0, 2]] becomes [[1, 0], [0, 2]] after the
        # ReLU; against one-hot words (0, 2) each row is a scaled one-hot.
        class Fixed:
            def __init__(self, m):
                self.m = m

            def __call__(self, x):
                return self.m

        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        k = np.array([[1.0, 0.0], [-1.0, 2.0]])
        dense = np.zeros((2, 2))
        rows = learned_sparse_encode(dense, np.array([0, 2]), 3, Fixed(q), Fixed(k))
        assert rows[0].bins.tolist() == [0] and rows[0].weights.tolist() == [1.0]
        assert rows[1].bins.tolist() == [2] and rows[1].weights.tolist() == [2.0]

    def test_nonnegative_and_matches_dense_path(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            T, d, vocab = int(rng.integers(2, 8)), 4, 9
            dense = rng.normal(size=(T, d))
            ids = rng.integers(vocab, size=T)
            qm = LinearMap(rng.normal(size=(d, d)))
            km = TwoLayerMap(rng.normal(size=(6, d)), rng.normal(size=(d, 6)))
            rows = learned_sparse_encode(dense, ids, vocab, qm, km)
            one_hot = np.zeros((T, vocab))
            one_hot[np.arange(T), ids] = 1.0
            expected = np.maximum(qm(dense) @ km(dense).T, 0.0) @ one_hot
            for t, row in enumerate(rows):
                assert (row.weights >= 0).all()
                materialized = np.zeros(vocab)
                materialized[row.bins] = row.weights
                np.testing.assert_allclose(materialized, expected[t], atol=1e-6)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(9)
        dense = rng.normal(size=(3, 4))
        with pytest.raises(ValueError, match="shape"):
            learned_sparse_encode(dense, np.arange(4), 10, LinearMap(np.eye(4)), LinearMap(np.eye(4)))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmtc.corpus import (
    DatasetError,
    Document,
    SparseVector,
    build_vocabulary,
    load_dataset,
    load_embeddings,
    save_dataset,
    shuffle_tokens,
    tokenize,
    vectorize_tfidf,
)
from conftest import make_corpus, write_jsonl


class TestLoadDataset:
    def test_tokenizes_text_records(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "Council Regulation fisheries", "labels": ["100142"]}])
        corpus = load_dataset(path)
        assert corpus.documents[0].tokens == ("council", "regulation", "fisheries")
        assert corpus.documents[0].gold_labels == {"100142"}

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "a", "labels": []}, {"id": "d1", "text": "b", "labels": []}])
        with pytest.raises(DatasetError, match="duplicate document id d1"):
            load_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        corpus = load_dataset(path)
        assert corpus.doc_count == 0
        assert corpus.label_universe == ()

    def test_external_universe(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "d1", "text": "a", "labels": ["x"]}])
        corpus = load_dataset(path, label_universe=["x", "y"])
        assert corpus.label_universe == ("x", "y")
        with pytest.raises(DatasetError, match="not in the declared label universe"):
            load_dataset(path, label_universe=["y"])

    def test_malformed_record_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "d1", "text": "a", "labels": []}\n{oops\n')
        with pytest.raises(DatasetError, match=":2"):
            load_dataset(path)

    def test_missing_fields(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "d1", "labels": []}])
        with pytest.raises(DatasetError, match="text-or-tokens"):
            load_dataset(path)

    def test_round_trip(self, tmp_path):
        src = tmp_path / "a.jsonl"
        write_jsonl(
            src,
            [
                {"id": "d1", "text": "Council Regulation, fisheries!", "labels": ["b", "a"]},
                {"id": "d2", "tokens": ["x", "Y"], "labels": []},
            ],
        )
        first = load_dataset(src)
        out = tmp_path / "b.jsonl"
        save_dataset(first, out)
        assert load_dataset(out) == first


def test_tokenize_keeps_digits_drops_punctuation():
    assert tokenize("E-Commerce; 2nd edition (2020)") == ["e", "commerce", "2nd", "edition", "2020"]


class TestVocabulary:
    def make(self, texts, ngram_max, cap):
        corpus = make_corpus(
            [(f"d{i}", t.split(), ["x"]) for i, t in enumerate(texts)], universe=["x"]
        )
        return build_vocabulary(corpus, ngram_max, cap)

    def test_ngrams_and_df(self):
        vocab = self.make(["a b", "b c"], 2, 100)
        assert set(vocab.entries) == {"a", "b", "c", "a b", "b c"}
        # df(b) = 2 -> idf = ln(2/2)+1 = 1; the rest have df = 1 -> ln 2 + 1
        assert vocab.idf[vocab.entries["b"]] == pytest.approx(1.0)
        for term in ("a", "c", "a b", "b c"):
            assert vocab.idf[vocab.entries[term]] == pytest.approx(math.log(2) + 1)

    def test_cap_keeps_highest_df_ties_lexicographic(self):
        vocab = self.make(["a b", "b c"], 2, 3)
        ranked = sorted(vocab.entries, key=vocab.entries.get)
        assert ranked == ["b", "a", "a b"]

    def test_unigram_only_has_no_spaces(self):
        vocab = self.make(["some words here", "more words"], 1, 100)
        assert all(" " not in term for term in vocab.entries)

    def test_ngram_max_validation(self):
        with pytest.raises(ValueError):
            self.make(["a"], 0, 10)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocabulary(make_corpus([], universe=["x"]), 1, 10)

    def test_deterministic(self):
        texts = ["u v w", "w x", "x y z u"]
        a, b = self.make(texts, 3, 7), self.make(texts, 3, 7)
        assert a.entries == b.entries
        assert np.array_equal(a.idf, b.idf)
        assert a.version == b.version

    def test_json_round_trip(self, tmp_path):
        vocab = self.make(["a b", "b c"], 2, 100)
        vocab.save(tmp_path / "v.json")
        loaded = type(vocab).load(tmp_path / "v.json")
        assert loaded.entries == vocab.entries
        assert np.array_equal(loaded.idf, vocab.idf)
        assert loaded.version == vocab.version


class TestTfidf:
    def test_empty_doc_is_zero_vector(self):
        vocab = TestVocabulary().make(["a b"], 1, 10)
        vec = vectorize_tfidf(Document("d", (), frozenset()), vocab)
        assert vec.nnz == 0

    def test_single_token_normalizes_to_one(self):
        vocab = TestVocabulary().make(["b"], 1, 10)
        vec = vectorize_tfidf(Document("d", ("b",), frozenset()), vocab)
        assert vec.values.tolist() == [pytest.approx(1.0)]

    def test_count_times_idf_then_l2(self):
        # idf(a) = idf(b) = 1: pre-norm {a: 2, b: 1} -> {a: 2/sqrt5, b: 1/sqrt5}
        vocab = TestVocabulary().make(["a b"], 1, 10)
        assert vocab.idf.tolist() == [1.0, 1.0]
        vec = vectorize_tfidf(Document("d", ("a", "a", "b"), frozenset()), vocab)
        dense = {i: v for i, v in zip(vec.indices, vec.values)}
        assert dense[vocab.entries["a"]] == pytest.approx(2 / math.sqrt(5))
        assert dense[vocab.entries["b"]] == pytest.approx(1 / math.sqrt(5))

    def test_unknown_ngrams_dropped(self):
        vocab = TestVocabulary().make(["a b"], 1, 10)
        vec = vectorize_tfidf(Document("d", ("zz", "qq"), frozenset()), vocab)
        assert vec.nnz == 0

    @given(st.lists(st.sampled_from("abcdefgh"), max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_norm_is_zero_or_one(self, tokens):
        vocab = TestVocabulary().make(["a b c d", "e f g h a"], 2, 50)
        vec = vectorize_tfidf(Document("d", tuple(tokens), frozenset()), vocab)
        assert vec.norm() == pytest.approx(0.0) or vec.norm() == pytest.approx(1.0, abs=1e-6)
        assert np.all(np.diff(vec.indices) > 0) or vec.nnz <= 1


def test_sparse_vector_rejects_unsorted_indices():
    with pytest.raises(ValueError):
        SparseVector(np.array([3, 1]), np.array([1.0, 2.0]))


class TestEmbeddings:
    def test_parses_rows(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("cat 1.0 2.0 3.0\ndog 0.5 0.25 0.125\n")
        table = load_embeddings(path)
        assert table.dim == 3
        assert set(table.vectors) == {"cat", "dog"}
        assert table.get("dog").tolist() == [0.5, 0.25, 0.125]

    def test_dimension_mismatch_names_line(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("cat 1.0 2.0 3.0\ndog 0.5 0.25 0.125 0.1\n")
        with pytest.raises(DatasetError, match="dimension mismatch at line 2"):
            load_embeddings(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("")
        with pytest.raises(DatasetError, match="no embeddings"):
            load_embeddings(path)


class TestShuffleTokens:
    @given(st.lists(st.sampled_from(["a", "b", "c", "dd"]), max_size=25), st.integers(0, 2**30))
    @settings(max_examples=80, deadline=None)
    def test_multiset_and_labels_preserved(self, tokens, seed):
        doc = Document("d", tuple(tokens), frozenset({"x", "y"}))
        out = shuffle_tokens(doc, seed)
        assert sorted(out.tokens) == sorted(doc.tokens)
        assert out.gold_labels == doc.gold_labels
        assert out.id == doc.id

    def test_single_token_fixed_point(self):
        doc = Document("d", ("only",), frozenset())
        assert shuffle_tokens(doc, 123).tokens == ("only",)

    def test_same_seed_same_permutation(self):
        doc = Document("d", tuple("abcdefgh"), frozenset())
        assert shuffle_tokens(doc, 9).tokens == shuffle_tokens(doc, 9).tokens

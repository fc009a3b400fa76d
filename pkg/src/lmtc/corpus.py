"""Dataset ingestion, tokenization, TF-IDF features, and word embeddings.

The canonical dataset format is UTF-8 JSON lines, one record per line::

    {"id": "d1", "text": "Council Regulation ...", "labels": ["100142"]}
    {"id": "d2", "tokens": ["council", "regulation"], "labels": ["100142"]}

``tokens`` wins over ``text`` when both are present.  Plain text is
lowercased and split on whitespace/punctuation boundaries (digits kept).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+")


class DatasetError(ValueError):
    """Malformed dataset, embedding, or record files."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    """One classified text: token sequence plus its gold label set."""

    id: str
    tokens: tuple[str, ...]
    gold_labels: frozenset[str]


@dataclass
class Corpus:
    """A dataset split with its (ordered) label universe."""

    split: str
    documents: list[Document]
    label_universe: tuple[str, ...]

    @property
    def doc_count(self) -> int:
        return len(self.documents)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.split == other.split
            and self.documents == other.documents
            and self.label_universe == other.label_universe
        )


def load_dataset(
    path: str | Path,
    split: str = "train",
    label_universe: Iterable[str] | None = None,
) -> Corpus:
    """Load a canonical JSONL dataset file.

    When ``label_universe`` is given, records referencing labels outside
    it are rejected; otherwise the universe is the sorted union of all
    gold labels in the file.
    """
    docs: list[Document] = []
    seen_ids: set[str] = set()
    universe = tuple(dict.fromkeys(label_universe)) if label_universe is not None else None
    known = set(universe) if universe is not None else None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "labels" not in rec:
                raise DatasetError(f"{path}:{lineno}: record must carry id, text-or-tokens, labels")
            doc_id = str(rec["id"])
            if doc_id in seen_ids:
                raise DatasetError(f"{path}:{lineno}: duplicate document id {doc_id}")
            seen_ids.add(doc_id)
            if "tokens" in rec:
                tokens = tuple(str(t) for t in rec["tokens"])
            elif "text" in rec:
                tokens = tuple(tokenize(str(rec["text"])))
            else:
                raise DatasetError(f"{path}:{lineno}: record must carry id, text-or-tokens, labels")
            labels = frozenset(str(l) for l in rec["labels"])
            if known is not None:
                extra = labels - known
                if extra:
                    raise DatasetError(
                        f"{path}:{lineno}: label {sorted(extra)[0]} not in the declared label universe"
                    )
            docs.append(Document(id=doc_id, tokens=tokens, gold_labels=labels))
    if universe is None:
        universe = tuple(sorted(set().union(*(d.gold_labels for d in docs)) if docs else set()))
    return Corpus(split=split, documents=docs, label_universe=universe)


def save_dataset(corpus: Corpus, path: str | Path) -> None:
    """Serialize a corpus back to canonical JSONL (round-trips exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            rec = {
                "id": doc.id,
                "labels": sorted(doc.gold_labels),
                "tokens": list(doc.tokens),
            }
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_label_universe(path: str | Path) -> tuple[str, ...]:
    """Read one label id per line, preserving file order."""
    with open(path, encoding="utf-8") as fh:
        labels = [line.strip() for line in fh if line.strip()]
    dupes = [l for l, c in Counter(labels).items() if c > 1]
    if dupes:
        raise DatasetError(f"{path}: duplicate label id {dupes[0]}")
    return tuple(labels)


def save_label_universe(labels: Iterable[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(label + "\n")


@dataclass(frozen=True)
class SparseVector:
    """Sorted sparse feature vector: parallel index/value arrays."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values length mismatch")
        if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("indices must be strictly increasing")

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values * self.values)))

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[self.indices] = self.values
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.values, other.values
        )


def empty_sparse() -> SparseVector:
    return SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))


def sparse_from_pairs(pairs: Iterable[tuple[int, float]]) -> SparseVector:
    items = sorted((int(i), float(v)) for i, v in pairs if v != 0.0)
    if not items:
        return empty_sparse()
    idx, val = zip(*items)
    return SparseVector(np.asarray(idx, dtype=np.int64), np.asarray(val, dtype=np.float64))


def stack_sparse(vectors: Sequence[SparseVector], dim: int) -> csr_matrix:
    """Stack sparse vectors into a CSR matrix of shape (len(vectors), dim)."""
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, vec in enumerate(vectors):
        indptr[i + 1] = indptr[i] + vec.nnz
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, np.int64)
    data = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0, np.float64)
    return csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


@dataclass
class Vocabulary:
    """N-gram feature index with inverse document frequencies.

    Entries are the ``max_features`` n-grams (orders 1..``ngram_max``)
    with the highest document frequency, ties broken lexicographically.
    ``idf[i] = ln(N / df) + 1``.
    """

    entries: dict[str, int]
    idf: np.ndarray
    ngram_max: int
    max_features: int

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def version(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.ngram_max}:{self.max_features}".encode())
        for term, idx in sorted(self.entries.items()):
            digest.update(f"{term}\x00{idx}\x00{self.idf[idx]!r}\x01".encode())
        return digest.hexdigest()[:12]

    def to_json(self) -> dict:
        order = sorted(self.entries, key=self.entries.get)
        return {
            "version": self.version,
            "ngram_max": self.ngram_max,
            "max_features": self.max_features,
            "terms": order,
            "idf": [float(x) for x in self.idf],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        entries = {term: i for i, term in enumerate(data["terms"])}
        return cls(
            entries=entries,
            idf=np.asarray(data["idf"], dtype=np.float64),
            ngram_max=int(data["ngram_max"]),
            max_features=int(data["max_features"]),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def doc_ngrams(tokens: Sequence[str], ngram_max: int) -> Iterable[str]:
    """All n-grams of orders 1..ngram_max, space-joined."""
    for n in range(1, ngram_max + 1):
        for i in range(len(tokens) - n + 1):
            yield " ".join(tokens[i : i + n])


def build_vocabulary(train: Corpus, ngram_max: int, max_features: int) -> Vocabulary:
    if ngram_max < 1:
        raise ValueError(f"ngram_max must be >= 1, got {ngram_max}")
    if max_features < 1:
        raise ValueError(f"max_features must be >= 1, got {max_features}")
    if train.doc_count == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    df: Counter[str] = Counter()
    for doc in train.documents:
        df.update(set(doc_ngrams(doc.tokens, ngram_max)))
    ranked = sorted(df, key=lambda t: (-df[t], t))[:max_features]
    entries = {term: i for i, term in enumerate(ranked)}
    n_docs = train.doc_count
    idf = np.array([math.log(n_docs / df[t]) + 1.0 for t in ranked], dtype=np.float64)
    return Vocabulary(entries=entries, idf=idf, ngram_max=ngram_max, max_features=max_features)


def vectorize_tfidf(doc: Document, vocab: Vocabulary) -> SparseVector:
    """Term-count x idf feature vector, L2-normalized; unknown n-grams dropped."""
    counts: Counter[int] = Counter()
    for gram in doc_ngrams(doc.tokens, vocab.ngram_max):
        idx = vocab.entries.get(gram)
        if idx is not None:
            counts[idx] += 1
    if not counts:
        return empty_sparse()
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64) * vocab.idf[indices]
    values /= np.sqrt(np.sum(values * values))
    return SparseVector(indices, values)


@dataclass
class EmbeddingTable:
    """Pretrained word vectors; ``oov_policy`` governs missing tokens."""

    dim: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "skip"  # skip | zero

    def __post_init__(self):
        if self.oov_policy not in ("skip", "zero"):
            raise ValueError(f"unknown oov policy {self.oov_policy!r}")

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def get(self, word: str) -> np.ndarray | None:
        return self.vectors.get(word)


def load_embeddings(path: str | Path, oov_policy: str = "skip") -> EmbeddingTable:
    """Parse a text embedding file: ``word v1 v2 ... vdim`` per line."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, raw = parts[0], parts[1:]
            if dim is None:
                dim = len(raw)
                if dim == 0:
                    raise DatasetError(f"{path}:{lineno}: embedding row has no values")
            elif len(raw) != dim:
                raise DatasetError(f"{path}: dimension mismatch at line {lineno}")
            try:
                vec = np.array([float(x) for x in raw], dtype=np.float64)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric embedding value") from exc
            if word in vectors:
                logger.warning("duplicate embedding for %r at line %d; keeping the last", word, lineno)
            vectors[word] = vec
    if dim is None:
        raise DatasetError(f"{path}: no embeddings")
    return EmbeddingTable(dim=dim, vectors=vectors, oov_policy=oov_policy)


def save_embeddings(words: Sequence[str], matrix: np.ndarray, path: str | Path) -> None:
    """Write rows in the text embedding format (one word + floats per line)."""
    if len(words) != matrix.shape[0]:
        raise ValueError("word count does not match matrix rows")
    with open(path, "w", encoding="utf-8") as fh:
        for word, row in zip(words, matrix):
            fh.write(word + " " + " ".join(repr(float(x)) for x in row) + "\n")


def shuffle_tokens(doc: Document, seed: int) -> Document:
    """Seeded uniform permutation of the token sequence; labels untouched."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(doc.tokens))
    return Document(
        id=doc.id,
        tokens=tuple(doc.tokens[i] for i in perm),
        gold_labels=doc.gold_labels,
    )

"""Frozen per-label input vectors: descriptor centroids, graph embeddings.

Three kinds feed the zero-shot attention models: ``centroid`` (mean of
descriptor token embeddings), ``node2vec`` (skip-gram over biased random
walks on the hierarchy), and ``concat`` (the two side by side).  All of
them stay fixed during neural training; that freeze is what lets unseen
labels be scored.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EmbeddingTable, load_embeddings, save_embeddings
from .hierarchy import LabelGraph

logger = logging.getLogger(__name__)

KINDS = ("centroid", "node2vec", "concat")


@dataclass
class LabelVectors:
    """Dense per-label vectors with a fixed label ordering."""

    kind: str
    labels: tuple[str, ...]
    matrix: np.ndarray
    frozen: bool = True
    zero_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown label-vector kind {self.kind!r}")
        if self.matrix.shape[0] != len(self.labels):
            raise ValueError("matrix row count must equal label count")
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update("\x00".join(self.labels).encode("utf-8"))
        digest.update(self.matrix.tobytes())
        return digest.hexdigest()

    def row(self, label: str) -> np.ndarray:
        return self.matrix[self.labels.index(label)]

    def subset(self, labels: tuple[str, ...]) -> "LabelVectors":
        index = {l: i for i, l in enumerate(self.labels)}
        missing = [l for l in labels if l not in index]
        if missing:
            raise ValueError(f"labels missing from vectors: {missing[:5]}")
        rows = np.asarray([index[l] for l in labels])
        return LabelVectors(
            kind=self.kind,
            labels=tuple(labels),
            matrix=self.matrix[rows].copy(),
            frozen=self.frozen,
            zero_labels=tuple(l for l in self.zero_labels if l in set(labels)),
        )


def centroid_label_vectors(graph: LabelGraph, emb: EmbeddingTable) -> LabelVectors:
    """Mean embedding of each label's descriptor tokens.

    With the ``skip`` OOV policy unknown tokens are excluded from the
    mean; with ``zero`` they contribute zero vectors.  Labels whose
    descriptors are absent or entirely OOV get a zero row and are
    flagged in ``zero_labels``.
    """
    rows = np.zeros((graph.label_count, emb.dim), dtype=np.float64)
    zeros = []
    for i, label in enumerate(graph.labels):
        tokens = graph.descriptors.get(label, ())
        found = [emb.vectors[t] for t in tokens if t in emb]
        denom = len(tokens) if emb.oov_policy == "zero" else len(found)
        if not found or denom == 0:
            zeros.append(label)
            continue
        rows[i] = np.sum(found, axis=0) / denom
    if zeros:
        logger.warning(
            "%d labels have empty or all-OOV descriptors (zero centroid), e.g. %s",
            len(zeros),
            zeros[:5],
        )
    return LabelVectors(
        kind="centroid",
        labels=graph.labels,
        matrix=rows.astype(np.float32),
        zero_labels=tuple(zeros),
    )


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walk_len: int = 40
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    dim: int = 100
    epochs: int = 5
    seed: int = 0
    lr: float = 0.025

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError("return parameter p and in-out parameter q must be > 0")
        if self.walk_len < 2:
            raise ValueError("walk_len must be >= 2")
        if self.walks_per_node < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("walks_per_node, window, negatives must be >= 1")
        if self.dim < 2 or self.epochs < 1:
            raise ValueError("dim must be >= 2 and epochs >= 1")


def transition_weights(
    graph: LabelGraph, prev: str, cur: str, p: float, q: float
) -> dict[str, float]:
    """Unnormalized second-order weights for the next step of a walk.

    1/p back to the previous node, 1 for nodes adjacent to it, 1/q for
    the rest (distance two from the previous node).
    """
    prev_nbrs = set(graph.neighbors(prev))
    weights = {}
    for nxt in graph.neighbors(cur):
        if nxt == prev:
            weights[nxt] = 1.0 / p
        elif nxt in prev_nbrs:
            weights[nxt] = 1.0
        else:
            weights[nxt] = 1.0 / q
    return weights


def node2vec_walks(graph: LabelGraph, config: WalkConfig) -> list[list[str]]:
    """Biased random walks over the undirected hierarchy.

    ``walks_per_node`` passes over all nodes in seeded shuffled order,
    each producing a walk of exactly ``walk_len`` nodes (the graph is
    connected, so a walk can always continue).
    """
    rng = np.random.default_rng(config.seed)
    nodes = list(graph.labels)
    walks: list[list[str]] = []
    for _ in range(config.walks_per_node):
        for start_idx in rng.permutation(len(nodes)):
            start = nodes[start_idx]
            walk = [start]
            nbrs = graph.neighbors(start)
            walk.append(nbrs[rng.integers(len(nbrs))])
            while len(walk) < config.walk_len:
                weights = transition_weights(graph, walk[-2], walk[-1], config.p, config.q)
                options = sorted(weights)
                probs = np.array([weights[o] for o in options])
                probs /= probs.sum()
                walk.append(options[rng.choice(len(options), p=probs)])
            walks.append(walk)
    return walks


def train_skipgram(
    walks: list[list[str]],
    config: WalkConfig,
    labels: tuple[str, ...] | None = None,
) -> tuple[LabelVectors, list[float]]:
    """Skip-gram with negative sampling over walk windows.

    Rows follow ``labels`` when given (e.g. the full graph label order);
    otherwise the sorted set of nodes seen in the walks.  Returns the
    vectors and the per-epoch mean loss, which trends downward.
    """
    if not walks:
        raise ValueError("no walks to train on")
    if labels is None:
        labels = tuple(sorted({n for walk in walks for n in walk}))
    index = {l: i for i, l in enumerate(labels)}
    centers, contexts = [], []
    freq = np.zeros(len(labels), dtype=np.float64)
    for walk in walks:
        ids = [index[n] for n in walk]
        for i, c in enumerate(ids):
            freq[c] += 1
            lo = max(0, i - config.window)
            hi = min(len(ids), i + config.window + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(c)
                    contexts.append(ids[j])
    centers = np.asarray(centers, dtype=np.int64)
    contexts = np.asarray(contexts, dtype=np.int64)
    noise = freq ** 0.75
    noise /= noise.sum()
    noise_cum = np.cumsum(noise)

    rng = np.random.default_rng(config.seed)
    w_in = (rng.random((len(labels), config.dim)) - 0.5) / config.dim
    w_out = np.zeros((len(labels), config.dim))

    max_score = 6.0  # clamp logits like word2vec's exp table
    n_pairs = len(centers)
    batch = 64
    total_steps = config.epochs * ((n_pairs + batch - 1) // batch)
    step = 0
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        perm = rng.permutation(n_pairs)
        loss_sum = 0.0
        for lo in range(0, n_pairs, batch):
            sel = perm[lo : lo + batch]
            c, o = centers[sel], contexts[sel]
            neg = np.searchsorted(noise_cum, rng.random((len(sel), config.negatives)))
            lr = config.lr * max(1e-4, 1.0 - step / total_steps)
            step += 1

            vin = w_in[c]                                   # (B, d)
            z_pos = np.clip(np.sum(vin * w_out[o], axis=1), -max_score, max_score)
            z_neg = np.clip(
                np.einsum("bd,bnd->bn", vin, w_out[neg]), -max_score, max_score
            )
            pos_score = 1.0 / (1.0 + np.exp(-z_pos))
            neg_score = 1.0 / (1.0 + np.exp(-z_neg))
            # -log sigma(z_pos) - sum log sigma(-z_neg), stably
            loss_sum += float(
                np.logaddexp(0.0, -z_pos).sum() + np.logaddexp(0.0, z_neg).sum()
            )

            g_pos = pos_score - 1.0                          # (B,)
            g_neg = neg_score                                # (B, n)
            grad_in = g_pos[:, None] * w_out[o] + np.einsum("bn,bnd->bd", g_neg, w_out[neg])
            np.add.at(w_out, o, -lr * g_pos[:, None] * vin)
            np.add.at(w_out, neg.ravel(), -lr * (g_neg[:, :, None] * vin[:, None, :]).reshape(-1, config.dim))
            np.add.at(w_in, c, -lr * grad_in)
        epoch_losses.append(loss_sum / n_pairs)
    vectors = LabelVectors(
        kind="node2vec", labels=labels, matrix=w_in.astype(np.float32)
    )
    return vectors, epoch_losses


def compose_label_inputs(
    mode: str,
    centroid: LabelVectors | None,
    walked: LabelVectors | None,
) -> LabelVectors:
    """Select or combine the label inputs a model variant consumes.

    ``u`` passes the centroids through, ``g`` the graph embeddings,
    ``u_concat_g`` concatenates them row-wise.
    """
    if mode == "u":
        if centroid is None:
            raise ValueError("centroid vectors required")
        return centroid
    if mode == "g":
        if walked is None:
            raise ValueError("node2vec vectors required")
        return walked
    if mode == "u_concat_g":
        if centroid is None:
            raise ValueError("centroid vectors required")
        if walked is None:
            raise ValueError("node2vec vectors required")
        if centroid.labels != walked.labels:
            raise ValueError("label ordering mismatch between centroid and node2vec vectors")
        return LabelVectors(
            kind="concat",
            labels=centroid.labels,
            matrix=np.concatenate([centroid.matrix, walked.matrix], axis=1),
            zero_labels=tuple(sorted(set(centroid.zero_labels) & set(walked.zero_labels))),
        )
    raise ValueError(f"unknown composition mode {mode!r}")


def save_label_vectors(vectors: LabelVectors, path: str | Path) -> None:
    """Write in the embedding text format, label id as the word."""
    save_embeddings(vectors.labels, vectors.matrix, path)


def load_label_vectors(path: str | Path, kind: str) -> LabelVectors:
    table = load_embeddings(path)
    labels = tuple(table.vectors)
    matrix = np.stack([table.vectors[l] for l in labels])
    return LabelVectors(kind=kind, labels=labels, matrix=matrix.astype(np.float32))

"""Probabilistic label trees: construction, node classifiers, beam inference.

Labels are embedded as the normalized mean TF-IDF vector of their
positive training documents, recursively partitioned with balanced
spherical k-means until a node holds at most ``m`` labels.  Every node
carries one-vs-rest L2-regularized logistic classifiers over its
targets (children at internal nodes, labels at leaves); inference walks
the tree top-down with a beam, scoring labels by the product of sigmoid
outputs along their root-to-leaf path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import csr_matrix, vstack

from .container import load_container, save_container
from .corpus import Corpus, SparseVector, stack_sparse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PLTreeConfig:
    k: int = 2              # branching factor
    m: int = 100            # max labels per leaf
    beam: int = 10          # inference beam width
    l2: float = 1.0         # classifier regularization strength
    weight_prune_eps: float = 0.01
    kmeans_max_iter: int = 50
    solver_tol: float = 1e-4

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"branching factor k must be >= 2, got {self.k}")
        if self.m < 1:
            raise ValueError(f"max labels per leaf m must be >= 1, got {self.m}")
        if self.beam < 1:
            raise ValueError(f"beam width must be >= 1, got {self.beam}")
        if self.l2 <= 0:
            raise ValueError(f"l2 strength must be > 0, got {self.l2}")
        if self.weight_prune_eps < 0:
            raise ValueError(f"weight_prune_eps must be >= 0, got {self.weight_prune_eps}")


@dataclass
class PLTNode:
    id: int
    label_subset: tuple[str, ...]
    children: tuple[int, ...] = ()
    weights: csr_matrix | None = None   # (n_targets, feature_dim)
    bias: np.ndarray | None = None      # (n_targets,)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class PLTree:
    nodes: dict[int, PLTNode]
    config: PLTreeConfig
    feature_dim: int
    labels: tuple[str, ...]
    root: int = 0
    trained: bool = False

    def leaf_of(self) -> dict[str, int]:
        """Map each label to its unique leaf node id."""
        out: dict[str, int] = {}
        for node in self.nodes.values():
            if node.is_leaf:
                for label in node.label_subset:
                    out[label] = node.id
        return out


def label_feature_vectors(
    train: Corpus, features: list[SparseVector], feature_dim: int
) -> dict[str, SparseVector]:
    """Per-label normalized mean of positive documents' feature vectors.

    Labels with no positive training documents are absent: the tree only
    covers labels it can be trained on.
    """
    if len(features) != train.doc_count:
        raise ValueError("one feature vector per training document required")
    doc_ids_by_label: dict[str, list[int]] = {}
    for i, doc in enumerate(train.documents):
        for label in doc.gold_labels:
            doc_ids_by_label.setdefault(label, []).append(i)
    x = stack_sparse(features, feature_dim)
    out: dict[str, SparseVector] = {}
    for label in sorted(doc_ids_by_label):
        rows = doc_ids_by_label[label]
        mean = np.asarray(x[rows].sum(axis=0)).ravel() / len(rows)
        norm = math.sqrt(float(mean @ mean))
        if norm > 0:
            mean /= norm
        idx = np.nonzero(mean)[0]
        out[label] = SparseVector(idx.astype(np.int64), mean[idx])
    return out


def _normalize_rows(x: csr_matrix) -> csr_matrix:
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    inv = 1.0 / norms
    x = x.multiply(inv[:, None]).tocsr()
    return x


def _balanced_assign(sim: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    """Assign each row to a column under capacity limits, highest margin first.

    Margin = similarity to the best open column minus similarity to the
    second best open column.  After any column fills up, margins are
    recomputed; ties go to the lowest row / column index.
    """
    n, k = sim.shape
    assign = np.full(n, -1, dtype=np.int64)
    remaining = capacities.copy()
    unassigned = list(range(n))
    while unassigned:
        open_cols = np.flatnonzero(remaining > 0)
        sub = sim[np.asarray(unassigned)][:, open_cols]
        best_pos = np.argmax(sub, axis=1)
        best_sim = sub[np.arange(len(unassigned)), best_pos]
        if len(open_cols) > 1:
            masked = sub.copy()
            masked[np.arange(len(unassigned)), best_pos] = -np.inf
            second = masked.max(axis=1)
        else:
            second = np.full(len(unassigned), -1.0)
        order = np.argsort(-(best_sim - second), kind="stable")
        closed = False
        still = []
        for pos in order:
            i = unassigned[pos]
            if closed:
                still.append(i)
                continue
            col = open_cols[best_pos[pos]]
            assign[i] = col
            remaining[col] -= 1
            if remaining[col] == 0:
                # a group filled up: margins of the rest are stale
                closed = True
        unassigned = sorted(still)
    return assign


def balanced_kmeans(
    vectors: list[SparseVector] | csr_matrix,
    k: int,
    seed: int | np.random.Generator,
    feature_dim: int | None = None,
    max_iter: int = 50,
) -> list[list[int]]:
    """Spherical k-means whose group sizes differ by at most one.

    Cosine similarity on row-normalized inputs; assignment is greedy in
    margin order under fixed capacities (the first ``n % k`` groups get
    the extra element).  Stops when assignments stabilize or after
    ``max_iter`` rounds.
    """
    if isinstance(vectors, csr_matrix):
        x = vectors
    else:
        if feature_dim is None:
            feature_dim = int(max((int(v.indices[-1]) + 1 for v in vectors if v.nnz), default=1))
        x = stack_sparse(vectors, feature_dim)
    n = x.shape[0]
    if n < k:
        raise ValueError(f"cannot split {n} vectors into {k} groups")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = _normalize_rows(x)
    base, extra = divmod(n, k)
    capacities = np.array([base + (1 if j < extra else 0) for j in range(k)], dtype=np.int64)
    centroids = np.asarray(x[rng.choice(n, size=k, replace=False)].todense())
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        sim = np.asarray((x @ centroids.T))
        new_assign = _balanced_assign(sim, capacities)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = np.flatnonzero(assign == j)
            mean = np.asarray(x[members].sum(axis=0)).ravel() / len(members)
            norm = math.sqrt(float(mean @ mean))
            if norm > 0:
                centroids[j] = mean / norm
    return [np.flatnonzero(assign == j).tolist() for j in range(k)]


def build_tree(
    label_vectors: dict[str, SparseVector],
    config: PLTreeConfig,
    seed: int,
    feature_dim: int | None = None,
) -> PLTree:
    """Recursively partition the label set into a PLT (depth-first ids)."""
    if not label_vectors:
        raise ValueError("no label vectors to build a tree from")
    labels = tuple(sorted(label_vectors))
    if feature_dim is None:
        feature_dim = int(
            max((int(v.indices[-1]) + 1 for v in label_vectors.values() if v.nnz), default=1)
        )
    x = stack_sparse([label_vectors[l] for l in labels], feature_dim)
    rng = np.random.default_rng(seed)
    nodes: dict[int, PLTNode] = {}
    counter = iter(range(len(labels) * 4 + 1))

    def grow(member_rows: list[int]) -> int:
        node_id = next(counter)
        subset = tuple(labels[r] for r in member_rows)
        if len(member_rows) <= config.m:
            nodes[node_id] = PLTNode(id=node_id, label_subset=subset)
            return node_id
        k = min(config.k, len(member_rows))
        groups = balanced_kmeans(
            x[np.asarray(member_rows)], k, rng, max_iter=config.kmeans_max_iter
        )
        children = tuple(grow([member_rows[i] for i in group]) for group in groups)
        nodes[node_id] = PLTNode(id=node_id, label_subset=subset, children=children)
        return node_id

    root = grow(list(range(len(labels))))
    return PLTree(nodes=nodes, config=config, feature_dim=feature_dim, labels=labels, root=root)


def _logistic_fit(
    x: csr_matrix, y: np.ndarray, l2: float, tol: float
) -> tuple[np.ndarray, float]:
    """L2-regularized logistic regression by L-BFGS; bias unregularized."""
    n, d = x.shape
    pos = int(y.sum())
    if pos == 0:
        return np.zeros(d), -30.0
    if pos == n:
        return np.zeros(d), 30.0

    def objective(wb):
        w, b = wb[:d], wb[d]
        z = x @ w + b
        # log(1 + e^z) - y z, accumulated stably
        loss = np.logaddexp(0.0, z) - y * z
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = x.T @ (p - y) + l2 * w
        grad_b = float(np.sum(p - y))
        value = float(loss.sum()) + 0.5 * l2 * float(w @ w)
        return value, np.concatenate([grad_w, [grad_b]])

    result = minimize(
        objective,
        np.zeros(d + 1),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": tol, "ftol": 1e-12, "maxiter": 500},
    )
    return result.x[:d], float(result.x[d])


def _train_one_node(
    node: PLTNode,
    nodes: dict[int, PLTNode],
    x: csr_matrix,
    doc_label_sets: list[frozenset[str]],
    docs_by_label: dict[str, np.ndarray],
    config: PLTreeConfig,
) -> tuple[csr_matrix, np.ndarray]:
    active = np.unique(
        np.concatenate(
            [docs_by_label.get(l, np.zeros(0, np.int64)) for l in node.label_subset]
            or [np.zeros(0, np.int64)]
        )
    )
    if node.is_leaf:
        target_sets = [frozenset([l]) for l in node.label_subset]
    else:
        target_sets = [frozenset(nodes[c].label_subset) for c in node.children]
    d = x.shape[1]
    if len(active) == 0:
        logger.warning(
            "node %d has no training documents; its %d classifiers default to always-negative",
            node.id,
            len(target_sets),
        )
        weights = csr_matrix((len(target_sets), d))
        return weights, np.full(len(target_sets), -30.0)
    sub = x[active]
    rows = []
    bias = np.zeros(len(target_sets))
    for t, target in enumerate(target_sets):
        y = np.array([bool(doc_label_sets[i] & target) for i in active], dtype=np.float64)
        w, b = _logistic_fit(sub, y, config.l2, config.solver_tol)
        if config.weight_prune_eps > 0:
            w[np.abs(w) < config.weight_prune_eps] = 0.0
        rows.append(csr_matrix(w))
        bias[t] = b
    return vstack(rows).tocsr(), bias


def train_node_classifiers(
    tree: PLTree,
    train: Corpus,
    features: list[SparseVector],
    threads: int = 1,
) -> PLTree:
    """Fit one-vs-rest logistic classifiers at every node.

    A node trains on the documents carrying at least one of its labels;
    a target is positive for a document holding a gold label inside the
    target's subset.  Nodes are independent, so they may train in
    parallel; results are attached by node id, keeping the output
    deterministic regardless of schedule.
    """
    if len(features) != train.doc_count:
        raise ValueError("one feature vector per training document required")
    x = stack_sparse(features, tree.feature_dim)
    doc_label_sets = [doc.gold_labels for doc in train.documents]
    docs_by_label: dict[str, np.ndarray] = {}
    for i, doc in enumerate(train.documents):
        for label in doc.gold_labels:
            docs_by_label.setdefault(label, []).append(i)  # type: ignore[arg-type]
    docs_by_label = {l: np.asarray(ids, dtype=np.int64) for l, ids in docs_by_label.items()}

    node_ids = sorted(tree.nodes)

    def run(node_id: int):
        return _train_one_node(
            tree.nodes[node_id], tree.nodes, x, doc_label_sets, docs_by_label, tree.config
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, node_ids))
    else:
        results = [run(nid) for nid in node_ids]
    for node_id, (weights, bias) in zip(node_ids, results):
        node = tree.nodes[node_id]
        node.weights = weights
        node.bias = bias
    tree.trained = True
    return tree


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _node_scores(node: PLTNode, vec: SparseVector) -> np.ndarray:
    z = np.asarray(node.weights[:, vec.indices] @ vec.values).ravel() + node.bias
    return _sigmoid(z)


def predict(tree: PLTree, doc_vector: SparseVector, top_k: int) -> list[tuple[str, float]]:
    """Beam search down the tree; labels scored by path probability products.

    Per level the ``beam`` highest-scoring frontier nodes survive; a
    label's score is the product of sigmoids along its root-to-leaf path
    times its leaf classifier output.  Ties break by label id.
    """
    if not tree.trained:
        raise ValueError("tree is not trained")
    beam = tree.config.beam
    frontier: list[tuple[int, float]] = [(tree.root, 1.0)]
    results: list[tuple[str, float]] = []
    while frontier:
        candidates: list[tuple[float, int]] = []
        for node_id, score in frontier:
            node = tree.nodes[node_id]
            probs = _node_scores(node, doc_vector)
            if node.is_leaf:
                results.extend(
                    (label, score * float(p)) for label, p in zip(node.label_subset, probs)
                )
            else:
                candidates.extend(
                    (score * float(p), child) for child, p in zip(node.children, probs)
                )
        candidates.sort(key=lambda item: (-item[0], item[1]))
        frontier = [(child, s) for s, child in candidates[:beam]]
    results.sort(key=lambda item: (-item[1], item[0]))
    return results[:top_k]


def save_tree(tree: PLTree, path: str | Path, vocab_version: str | None = None) -> None:
    """Serialize to the binary container (float32 sparse weights)."""
    if not tree.trained:
        raise ValueError("refusing to save an untrained tree")
    label_index = {label: i for i, label in enumerate(tree.labels)}
    meta_nodes = []
    arrays: dict[str, np.ndarray] = {}
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        meta_nodes.append(
            {
                "id": node.id,
                "labels": [label_index[l] for l in node.label_subset],
                "children": list(node.children),
            }
        )
        w = node.weights.tocsr()
        arrays[f"node{node_id}/indptr"] = w.indptr.astype(np.int64)
        arrays[f"node{node_id}/indices"] = w.indices.astype(np.int32)
        arrays[f"node{node_id}/values"] = w.data.astype(np.float32)
        arrays[f"node{node_id}/bias"] = node.bias.astype(np.float32)
    meta = {
        "k": tree.config.k,
        "m": tree.config.m,
        "beam": tree.config.beam,
        "l2": tree.config.l2,
        "weight_prune_eps": tree.config.weight_prune_eps,
        "feature_dim": tree.feature_dim,
        "labels": list(tree.labels),
        "root": tree.root,
        "nodes": meta_nodes,
        "vocab_version": vocab_version,
    }
    save_container(path, "plt", meta, arrays)


def load_tree(path: str | Path) -> tuple[PLTree, str | None]:
    """Load a tree container; returns ``(tree, vocab_version)``."""
    kind, meta, arrays = load_container(path)
    if kind != "plt":
        raise ValueError(f"{path}: expected a plt container, found {kind!r}")
    labels = tuple(meta["labels"])
    config = PLTreeConfig(
        k=meta["k"],
        m=meta["m"],
        beam=meta["beam"],
        l2=meta["l2"],
        weight_prune_eps=meta["weight_prune_eps"],
    )
    nodes: dict[int, PLTNode] = {}
    for rec in meta["nodes"]:
        node_id = rec["id"]
        indptr = arrays[f"node{node_id}/indptr"].astype(np.int64)
        indices = arrays[f"node{node_id}/indices"].astype(np.int32)
        values = arrays[f"node{node_id}/values"].astype(np.float64)
        n_rows = len(indptr) - 1
        weights = csr_matrix((values, indices, indptr), shape=(n_rows, meta["feature_dim"]))
        nodes[node_id] = PLTNode(
            id=node_id,
            label_subset=tuple(labels[i] for i in rec["labels"]),
            children=tuple(rec["children"]),
            weights=weights,
            bias=arrays[f"node{node_id}/bias"].astype(np.float64),
        )
    tree = PLTree(
        nodes=nodes,
        config=config,
        feature_dim=meta["feature_dim"],
        labels=labels,
        root=meta["root"],
        trained=True,
    )
    return tree, meta.get("vocab_version")

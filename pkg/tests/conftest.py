"""Shared synthetic-data builders and independent oracles for the tests.

The oracles here are deliberately written as plain loops, separate from
the library code they check.
"""

from __future__ import annotations

import json
import math

import networkx as nx
import numpy as np

from lmtc.corpus import Corpus, Document
from lmtc.hierarchy import LabelGraph, build_graph


# ----------------------------------------------------------------- oracles


def oracle_metrics(ranked, gold, k):
    """Brute-force P@K, R@K, RP@K, nDCG@K for one ranking."""
    gold = set(gold)
    hits_at = []
    count = 0
    for label in list(ranked)[:k]:
        if label in gold:
            count += 1
        hits_at.append(count)
    while len(hits_at) < k:
        hits_at.append(count)
    p = hits_at[k - 1] / k
    r = hits_at[k - 1] / len(gold)
    k_eff = min(k, len(gold))
    rp = hits_at[k_eff - 1] / k_eff
    dcg = 0.0
    for rank, label in enumerate(list(ranked)[:k]):
        if label in gold:
            dcg += 1.0 / math.log2(rank + 2)
    ideal = 0.0
    for rank in range(min(k, len(gold))):
        ideal += 1.0 / math.log2(rank + 2)
    return p, r, rp, dcg / ideal


def to_networkx(graph: LabelGraph) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(graph.labels)
    for label in graph.labels:
        for child in graph.children[label]:
            g.add_edge(label, child)
    return g


def oracle_gap(nx_graph: nx.Graph, gold) -> tuple[int, int, float]:
    """Union of the (unique, on trees) shortest paths of all gold pairs."""
    gold = sorted(set(gold))
    nodes = set(gold)
    for i in range(len(gold)):
        for j in range(i + 1, len(gold)):
            nodes.update(nx.shortest_path(nx_graph, gold[i], gold[j]))
    return len(gold), len(nodes), len(gold) / len(nodes)


def oracle_plt_scores(tree, vec):
    """Full top-down traversal: every label's exact path probability product."""
    scores = {}

    def sigmoid_scores(node):
        z = np.zeros(node.weights.shape[0]) + node.bias
        dense = vec.to_dense(tree.feature_dim)
        for t in range(node.weights.shape[0]):
            row = node.weights.getrow(t)
            z[t] += float((row @ dense)[0])
        return 1.0 / (1.0 + np.exp(-z))

    def walk(node_id, acc):
        node = tree.nodes[node_id]
        probs = sigmoid_scores(node)
        if node.is_leaf:
            for label, p in zip(node.label_subset, probs):
                scores[label] = acc * float(p)
        else:
            for child, p in zip(node.children, probs):
                walk(child, acc * float(p))

    walk(tree.root, 1.0)
    return scores


# ---------------------------------------------------------------- builders


def random_tree_graph(n_nodes: int, rng: np.random.Generator) -> LabelGraph:
    """Uniform random rooted tree: each node's parent is an earlier node."""
    edges = [(f"n{int(rng.integers(0, i))}", f"n{i}") for i in range(1, n_nodes)]
    return build_graph(edges, root="n0")


def make_corpus(records, split="train", universe=None) -> Corpus:
    docs = [
        Document(id=doc_id, tokens=tuple(tokens), gold_labels=frozenset(labels))
        for doc_id, tokens, labels in records
    ]
    if universe is None:
        universe = tuple(sorted(set().union(*(d.gold_labels for d in docs)) if docs else set()))
    return Corpus(split=split, documents=docs, label_universe=tuple(universe))


def separable_corpus(n_docs, n_labels, seed, split="train", noise_tokens=8, universe=None):
    """Documents whose tokens identify their single gold label."""
    rng = np.random.default_rng(seed)
    labels = [f"L{i:03d}" for i in range(n_labels)]
    records = []
    for i in range(n_docs):
        label = labels[int(rng.integers(n_labels))]
        tokens = [f"tok_{label}"] * 3 + [f"noise{int(rng.integers(noise_tokens))}"]
        records.append((f"{split}{i}", tokens, [label]))
    return make_corpus(records, split=split, universe=universe or labels)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def toy_world(tmp_path, n_groups=4, leaves_per_group=4, n_train=200, n_dev=60, n_test=60,
              emb_dim=10, seed=0):
    """A small dataset + hierarchy + embeddings on disk, for CLI tests.

    Labels are the leaves of a two-level tree; each document's tokens
    repeat its gold label's descriptor words plus one noise token.
    """
    rng = np.random.default_rng(seed)
    edges, desc, labels = [], {"ROOT": "root"}, []
    for g in range(n_groups):
        gid = f"G{g}"
        edges.append(("ROOT", gid))
        desc[gid] = f"group{g} concept"
        for i in range(leaves_per_group):
            lid = f"G{g}L{i}"
            labels.append(lid)
            edges.append((gid, lid))
            desc[lid] = f"group{g} item{i}"
    (tmp_path / "edges.tsv").write_text("".join(f"{p}\t{c}\n" for p, c in edges))
    (tmp_path / "desc.tsv").write_text("".join(f"{l}\t{t}\n" for l, t in desc.items()))
    words = sorted({w for t in desc.values() for w in t.split()} | {f"n{i}" for i in range(20)})
    with open(tmp_path / "emb.txt", "w") as fh:
        for w in words:
            fh.write(w + " " + " ".join(repr(float(x)) for x in rng.normal(size=emb_dim)) + "\n")

    def split(name, n, split_seed):
        r = np.random.default_rng(split_seed)
        rows = []
        for i in range(n):
            label = labels[int(r.integers(len(labels)))]
            rows.append(
                {
                    "id": f"{name}{i}",
                    "tokens": list(desc[label].split()) * 2 + [f"n{int(r.integers(20))}"],
                    "labels": [label],
                }
            )
        write_jsonl(tmp_path / f"{name}.jsonl", rows)

    split("train", n_train, seed + 1)
    split("dev", n_dev, seed + 2)
    split("test", n_test, seed + 3)
    return {
        "edges": tmp_path / "edges.tsv",
        "descriptors": tmp_path / "desc.tsv",
        "embeddings": tmp_path / "emb.txt",
        "train": tmp_path / "train.jsonl",
        "dev": tmp_path / "dev.jsonl",
        "test": tmp_path / "test.jsonl",
        "labels": labels,
    }

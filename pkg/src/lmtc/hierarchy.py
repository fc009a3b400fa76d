"""Label hierarchy graph, annotation-proximity measure, and frequency buckets.

The hierarchy is read from a TSV edge file (``parent<TAB>child`` per
line) plus an optional descriptor file (``label<TAB>descriptor text``).
Edges are directed parent-to-child for bookkeeping but all path
computations treat the graph as undirected: the shortest route between
two sibling leaves necessarily climbs through their common ancestor.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus, tokenize

logger = logging.getLogger(__name__)


class HierarchyError(ValueError):
    """Structural problems in a label hierarchy."""


@dataclass
class LabelGraph:
    """Label hierarchy with parent/child adjacency and descriptors.

    ``labels`` is sorted and includes the root; ``root`` may be None for
    graphs built in memory without a distinguished top node.
    """

    labels: tuple[str, ...]
    parents: dict[str, frozenset[str]]
    children: dict[str, frozenset[str]]
    descriptors: dict[str, tuple[str, ...]]
    root: str | None = None
    _undirected: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._undirected:
            self._undirected = {
                l: tuple(sorted(self.parents[l] | self.children[l])) for l in self.labels
            }

    @property
    def label_count(self) -> int:
        return len(self.labels)

    def neighbors(self, label: str) -> tuple[str, ...]:
        """Sorted undirected neighbors."""
        return self._undirected[label]

    def has_label(self, label: str) -> bool:
        return label in self.parents


def build_graph(
    edges: Iterable[tuple[str, str]],
    descriptors: dict[str, str] | None = None,
    root: str | None = None,
    validate: bool = True,
) -> LabelGraph:
    """Assemble a LabelGraph from (parent, child) pairs.

    With ``validate`` the graph must be acyclic (directed), connected
    (undirected), and free of self-loops; a unique parentless node is
    taken as the root when ``root`` is not given.
    """
    parents: dict[str, set[str]] = {}
    children: dict[str, set[str]] = {}

    def ensure(label: str) -> None:
        parents.setdefault(label, set())
        children.setdefault(label, set())

    for parent, child in edges:
        if parent == child:
            raise HierarchyError(f"self-loop on label {parent}")
        ensure(parent)
        ensure(child)
        children[parent].add(child)
        parents[child].add(parent)

    desc_tokens = {l: tuple(tokenize(t)) for l, t in (descriptors or {}).items()}

    if root is not None and root not in parents:
        ensure(root)

    parentless = sorted(l for l, p in parents.items() if not p)
    if root is None:
        if len(parentless) == 1:
            root = parentless[0]
    elif parents.get(root):
        raise HierarchyError(f"declared root {root} has parents {sorted(parents[root])}")

    orphans = sorted(set(desc_tokens) - set(parents))
    if orphans:
        if root is None:
            raise HierarchyError(
                f"labels {orphans[:5]} appear only in descriptors and no root exists to attach them to"
            )
        for label in orphans:
            logger.warning("label %s has no edges; attaching it under root %s", label, root)
            ensure(label)
            children[root].add(label)
            parents[label].add(root)

    labels = tuple(sorted(parents))
    if not labels:
        raise HierarchyError("hierarchy has no labels")

    graph = LabelGraph(
        labels=labels,
        parents={l: frozenset(parents[l]) for l in labels},
        children={l: frozenset(children[l]) for l in labels},
        descriptors=desc_tokens,
        root=root,
    )
    if validate:
        _check_acyclic(graph)
        _check_connected(graph)
    return graph


def _check_acyclic(graph: LabelGraph) -> None:
    indeg = {l: len(graph.parents[l]) for l in graph.labels}
    queue = deque(sorted(l for l, d in indeg.items() if d == 0))
    visited = 0
    while queue:
        node = queue.popleft()
        visited += 1
        for child in sorted(graph.children[node]):
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if visited != graph.label_count:
        cycle = _find_cycle(graph, {l for l, d in indeg.items() if d > 0})
        raise HierarchyError(f"hierarchy contains a cycle: {' -> '.join(cycle)}")


def _find_cycle(graph: LabelGraph, candidates: set[str]) -> list[str]:
    start = sorted(candidates)[0]
    seen: dict[str, str | None] = {start: None}
    node = start
    while True:
        nxt = sorted(c for c in graph.children[node] if c in candidates)[0]
        if nxt in seen:
            cycle = [nxt]
            cur = node
            while cur != nxt:
                cycle.append(cur)
                cur = seen[cur]
            cycle.append(nxt)
            return cycle[::-1]
        seen[nxt] = node
        node = nxt


def _check_connected(graph: LabelGraph) -> None:
    start = graph.labels[0]
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nbr in graph.neighbors(node):
            if nbr not in seen:
                seen.add(nbr)
                queue.append(nbr)
    if len(seen) != graph.label_count:
        missing = sorted(set(graph.labels) - seen)
        raise HierarchyError(
            f"hierarchy is disconnected; {len(missing)} labels unreachable, e.g. {missing[:5]}"
        )


def load_hierarchy(
    edge_path: str | Path,
    descriptor_path: str | Path | None = None,
    root: str | None = None,
) -> LabelGraph:
    """Load and validate a hierarchy from TSV edge/descriptor files."""
    edges = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise HierarchyError(f"{edge_path}:{lineno}: expected parent<TAB>child")
            edges.append((parts[0], parts[1]))
    descriptors: dict[str, str] = {}
    if descriptor_path is not None:
        with open(descriptor_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                parts = line.split("\t", 1)
                if len(parts) != 2:
                    raise HierarchyError(f"{descriptor_path}:{lineno}: expected label<TAB>text")
                descriptors[parts[0]] = parts[1]
    return build_graph(edges, descriptors, root=root)


def _bfs_distances(graph: LabelGraph, source: str) -> dict[str, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nbr in graph.neighbors(node):
            if nbr not in dist:
                dist[nbr] = dist[node] + 1
                queue.append(nbr)
    return dist


def _lex_shortest_path(graph: LabelGraph, src: str, dst: str, dist_to_dst: dict[str, int]) -> list[str]:
    """Lexicographically smallest shortest path src -> dst.

    Greedy walk: from each node pick the smallest-id neighbor that is
    one step closer to ``dst``.  Any valid next step extends to a full
    shortest path, so the greedy choice is globally optimal.
    """
    path = [src]
    node = src
    while node != dst:
        remaining = dist_to_dst[node]
        node = next(n for n in graph.neighbors(node) if dist_to_dst.get(n) == remaining - 1)
        path.append(node)
    return path


def gap_document(graph: LabelGraph, gold: Iterable[str]) -> tuple[int, int, float]:
    """Annotation proximity of one document's gold labels.

    Extends the gold set with the nodes of one shortest undirected path
    per unordered gold pair (the lexicographically smallest, which is
    the unique path on trees) and returns
    ``(|gold|, |extended|, |gold| / |extended|)``.
    """
    gold_set = set(gold)
    if not gold_set:
        raise ValueError("gold label set is empty")
    for label in sorted(gold_set):
        if not graph.has_label(label):
            raise HierarchyError(f"gold label {label} is not in the hierarchy")
    ordered = sorted(gold_set)
    extended = set(ordered)
    if len(ordered) > 1:
        dist_maps = {label: _bfs_distances(graph, label) for label in ordered}
        for i, a in enumerate(ordered):
            for b in ordered[i + 1 :]:
                extended.update(_lex_shortest_path(graph, a, b, dist_maps[b]))
    return len(gold_set), len(extended), len(gold_set) / len(extended)


@dataclass
class GapReport:
    """Dataset-level proximity and density statistics."""

    per_document: dict[str, tuple[int, int, float]]
    mean_gap: float
    density: float
    avg_labels_per_doc: float
    doc_count: int
    skipped_docs: int

    def to_json(self) -> dict:
        return {
            "mean_gap": self.mean_gap,
            "density": self.density,
            "avg_labels_per_doc": self.avg_labels_per_doc,
            "doc_count": self.doc_count,
            "skipped_docs": self.skipped_docs,
            "per_document": {
                doc_id: {"gold": n, "extended": n_plus, "gap": gap}
                for doc_id, (n, n_plus, gap) in sorted(self.per_document.items())
            },
        }


def gap_dataset(graph: LabelGraph, corpus: Corpus) -> GapReport:
    """Mean proximity, label density, and label cardinality over a corpus.

    Documents with no gold labels are skipped for the proximity mean but
    counted (and still enter density / cardinality, contributing zero).
    """
    if corpus.doc_count == 0:
        raise ValueError("empty corpus")
    per_doc: dict[str, tuple[int, int, float]] = {}
    skipped = 0
    label_total = 0
    for doc in corpus.documents:
        if not doc.gold_labels:
            skipped += 1
            continue
        per_doc[doc.id] = gap_document(graph, doc.gold_labels)
        label_total += len(doc.gold_labels)
    if not per_doc:
        raise ValueError("no documents with gold labels")
    n = corpus.doc_count
    mean_gap = sum(g for _, _, g in per_doc.values()) / len(per_doc)
    density = label_total / (n * graph.label_count)
    return GapReport(
        per_document=per_doc,
        mean_gap=mean_gap,
        density=density,
        avg_labels_per_doc=label_total / n,
        doc_count=n,
        skipped_docs=skipped,
    )


@dataclass
class LabelBuckets:
    """Frequent / few-shot / zero-shot partition of the label universe.

    ``frequent`` holds labels with more than ``t_freq`` training
    documents, ``few`` those with 1..t_freq, ``zero`` the rest.
    """

    frequent: frozenset[str]
    few: frozenset[str]
    zero: frozenset[str]
    thresholds: tuple[int, int]
    counts: dict[str, int]

    def bucket_of(self, label: str) -> str:
        if label in self.frequent:
            return "frequent"
        if label in self.few:
            return "few"
        return "zero"

    def as_dict(self) -> dict[str, frozenset[str]]:
        return {"frequent": self.frequent, "few": self.few, "zero": self.zero}


def bucketize_labels(train: Corpus, t_freq: int) -> LabelBuckets:
    """Partition the training label universe by assignment counts."""
    if t_freq < 1:
        raise ValueError(f"t_freq must be >= 1, got {t_freq}")
    counts: Counter[str] = Counter()
    for doc in train.documents:
        counts.update(doc.gold_labels)
    frequent, few, zero = set(), set(), set()
    full_counts = {}
    for label in train.label_universe:
        n = counts.get(label, 0)
        full_counts[label] = n
        if n > t_freq:
            frequent.add(label)
        elif n >= 1:
            few.add(label)
        else:
            zero.add(label)
    return LabelBuckets(
        frequent=frozenset(frequent),
        few=frozenset(few),
        zero=frozenset(zero),
        thresholds=(t_freq, 1),
        counts=full_counts,
    )

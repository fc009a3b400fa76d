"""Ranking metrics (P@K, R@K, RP@K, nDCG@K) and bucketed evaluation reports."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .hierarchy import LabelBuckets

METRIC_NAMES = ("P", "R", "RP", "nDCG")


@dataclass(frozen=True)
class RankedPrediction:
    """Score-descending label ranking for one document (ties pre-broken by label id)."""

    doc_id: str
    labels: tuple[str, ...]
    scores: tuple[float, ...] = ()

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in ranking for document {self.doc_id}")
        if self.scores and len(self.scores) != len(self.labels):
            raise ValueError(f"scores/labels length mismatch for document {self.doc_id}")


def precision_recall_at_k(ranked: Sequence[str], gold: Iterable[str], k: int) -> tuple[float, float]:
    """(hits/K, hits/|gold|) over the top K ranked labels."""
    gold_set = set(gold)
    if not gold_set:
        raise ValueError("gold label set is empty")
    hits = sum(1 for label in ranked[:k] if label in gold_set)
    return hits / k, hits / len(gold_set)


def rp_at_k(ranked: Sequence[str], gold: Iterable[str], k: int) -> float:
    """R-Precision at K: precision at min(K, |gold|)."""
    gold_set = set(gold)
    if not gold_set:
        raise ValueError("gold label set is empty")
    k_eff = min(k, len(gold_set))
    hits = sum(1 for label in ranked[:k_eff] if label in gold_set)
    return hits / k_eff


def ndcg_at_k(ranked: Sequence[str], gold: Iterable[str], k: int) -> float:
    """Binary-gain nDCG with 1/log2(rank+1) discounts."""
    gold_set = set(gold)
    if not gold_set:
        raise ValueError("gold label set is empty")
    dcg = sum(
        1.0 / math.log2(rank + 2)
        for rank, label in enumerate(ranked[:k])
        if label in gold_set
    )
    ideal = sum(1.0 / math.log2(rank + 2) for rank in range(min(k, len(gold_set))))
    return dcg / ideal


def _doc_metrics(ranked: Sequence[str], gold: set[str], k: int) -> dict[str, float]:
    p, r = precision_recall_at_k(ranked, gold, k)
    return {"P": p, "R": r, "RP": rp_at_k(ranked, gold, k), "nDCG": ndcg_at_k(ranked, gold, k)}


@dataclass
class GroupMetrics:
    doc_count: int
    skipped: int
    means: dict[str, float]


@dataclass
class MetricsReport:
    """Mean metrics over documents, overall and per frequency bucket."""

    k: int
    protocol: str
    overall: GroupMetrics
    buckets: dict[str, GroupMetrics] = field(default_factory=dict)
    l_avg: float = 0.0

    def to_json(self) -> dict:
        def group(g: GroupMetrics) -> dict:
            return {
                "doc_count": g.doc_count,
                "skipped": g.skipped,
                **{f"{m}@{self.k}": g.means[m] for m in METRIC_NAMES},
            }

        return {
            "k": self.k,
            "protocol": self.protocol,
            "l_avg": self.l_avg,
            "overall": group(self.overall),
            "buckets": {name: group(g) for name, g in sorted(self.buckets.items())},
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        """Aligned plain-text table: one row per label group."""
        headers = ["group", "docs"] + [f"{m}@{self.k}" for m in METRIC_NAMES]
        rows = [["all", str(self.overall.doc_count)] + [f"{self.overall.means[m]:.4f}" for m in METRIC_NAMES]]
        for name in ("frequent", "few", "zero"):
            if name in self.buckets:
                g = self.buckets[name]
                rows.append([name, str(g.doc_count)] + [f"{g.means[m]:.4f}" for m in METRIC_NAMES])
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = [
            "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
        ]
        lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
        return "\n".join(lines) + "\n"


def _mean_metrics(per_doc: list[dict[str, float]]) -> dict[str, float]:
    if not per_doc:
        return {m: 0.0 for m in METRIC_NAMES}
    return {m: sum(d[m] for d in per_doc) / len(per_doc) for m in METRIC_NAMES}


def evaluate_buckets(
    predictions: Sequence[RankedPrediction],
    golds: Mapping[str, Iterable[str]],
    buckets: LabelBuckets | None,
    k: int,
    protocol: str = "restricted",
) -> MetricsReport:
    """Evaluate rankings overall and per frequency bucket.

    ``restricted`` drops non-bucket labels from both the ranking and the
    gold set before scoring a bucket; ``full`` keeps the full ranking
    and restricts only the gold set.  Documents whose (restricted) gold
    set is empty are skipped for that group and counted.
    """
    if protocol not in ("restricted", "full"):
        raise ValueError(f"unknown bucket protocol {protocol!r}")
    overall_rows: list[dict[str, float]] = []
    bucket_rows: dict[str, list[dict[str, float]]] = {name: [] for name in (buckets.as_dict() if buckets else {})}
    bucket_skipped: dict[str, int] = {name: 0 for name in bucket_rows}
    skipped = 0
    gold_total = 0
    for pred in predictions:
        if pred.doc_id not in golds:
            raise KeyError(f"prediction references unknown document id {pred.doc_id}")
        gold = set(golds[pred.doc_id])
        if not gold:
            skipped += 1
            continue
        gold_total += len(gold)
        overall_rows.append(_doc_metrics(pred.labels, gold, k))
        if buckets is None:
            continue
        for name, bucket_labels in buckets.as_dict().items():
            bucket_gold = gold & bucket_labels
            if not bucket_gold:
                bucket_skipped[name] += 1
                continue
            if protocol == "restricted":
                ranked = [l for l in pred.labels if l in bucket_labels]
            else:
                ranked = list(pred.labels)
            bucket_rows[name].append(_doc_metrics(ranked, bucket_gold, k))
    report = MetricsReport(
        k=k,
        protocol=protocol,
        overall=GroupMetrics(
            doc_count=len(overall_rows), skipped=skipped, means=_mean_metrics(overall_rows)
        ),
        l_avg=gold_total / len(overall_rows) if overall_rows else 0.0,
    )
    for name, rows in bucket_rows.items():
        report.buckets[name] = GroupMetrics(
            doc_count=len(rows), skipped=bucket_skipped[name], means=_mean_metrics(rows)
        )
    return report


def load_predictions(path) -> list[RankedPrediction]:
    """Read a prediction dump: one ``{"id", "ranking": [[label, score], ...]}`` per line."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ranking = rec["ranking"]
            preds.append(
                RankedPrediction(
                    doc_id=str(rec["id"]),
                    labels=tuple(str(l) for l, _ in ranking),
                    scores=tuple(float(s) for _, s in ranking),
                )
            )
    return preds


def save_predictions(preds: Sequence[RankedPrediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pred in preds:
            scores = pred.scores if pred.scores else [0.0] * len(pred.labels)
            rec = {"id": pred.doc_id, "ranking": [[l, s] for l, s in zip(pred.labels, scores)]}
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")

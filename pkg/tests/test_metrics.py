import math

import numpy as np
import pytest

from lmtc.hierarchy import bucketize_labels
from lmtc.metrics import (
    RankedPrediction,
    evaluate_buckets,
    load_predictions,
    ndcg_at_k,
    precision_recall_at_k,
    rp_at_k,
    save_predictions,
)
from conftest import make_corpus, oracle_metrics


class TestRPAtK:
    def test_all_gold_on_top_k_reduced(self):
        assert rp_at_k(["a", "b", "c", "d", "e"], {"a", "b"}, 5) == 1.0

    def test_more_gold_than_k(self):
        ranked = ["a", "x", "b", "y", "c"]  # 3 gold in top 5
        assert rp_at_k(ranked, set("abcdef"), 5) == pytest.approx(0.6)

    def test_k_reduced_to_one_counts_top_one_only(self):
        assert rp_at_k(["b", "a", "c"], {"a"}, 5) == 0.0

    def test_equals_precision_when_gold_at_least_k(self):
        rng = np.random.default_rng(0)
        labels = [f"l{i}" for i in range(20)]
        for _ in range(50):
            ranked = list(rng.permutation(labels))
            gold = set(rng.choice(labels, size=int(rng.integers(5, 15)), replace=False))
            k = int(rng.integers(1, len(gold) + 1))
            p, _ = precision_recall_at_k(ranked, gold, k)
            assert rp_at_k(ranked, gold, k) == pytest.approx(p)


class TestNdcgAtK:
    def test_perfect_ranking(self):
        assert ndcg_at_k(["a", "b", "c"], {"a", "b", "c"}, 3) == pytest.approx(1.0)

    def test_hand_derived_example(self):
        # gold {a, b}, ranked [a, x, b], K = 3:
        # DCG = 1 + 0 + 1/log2(4) = 1.5; ideal = 1 + 1/log2(3)
        value = ndcg_at_k(["a", "x", "b"], {"a", "b"}, 3)
        expected = 1.5 / (1.0 + 1.0 / math.log2(3))
        assert value == pytest.approx(expected, abs=1e-12)
        assert round(value, 4) == 0.9197

    def test_no_gold_in_top_k(self):
        assert ndcg_at_k(["x", "y"], {"a"}, 2) == 0.0

    def test_invariant_below_k(self):
        gold = {"a", "b"}
        assert ndcg_at_k(["a", "b", "x", "y", "z"], gold, 2) == ndcg_at_k(
            ["a", "b", "z", "x", "y"], gold, 2
        )

    def test_promoting_gold_above_nongold_increases(self):
        gold = {"b"}
        low = ndcg_at_k(["x", "y", "b"], gold, 3)
        high = ndcg_at_k(["x", "b", "y"], gold, 3)
        assert high > low


class TestPrecisionRecall:
    def test_few_gold_packs_top(self):
        p, r = precision_recall_at_k(["a", "b", "c", "d", "e"], {"a", "b"}, 5)
        assert (p, r) == (pytest.approx(0.4), pytest.approx(1.0))

    def test_no_hits(self):
        assert precision_recall_at_k(["x", "y"], {"a"}, 2) == (0.0, 0.0)

    def test_exact_cover(self):
        p, r = precision_recall_at_k(["a", "b"], {"a", "b"}, 2)
        assert (p, r) == (1.0, 1.0)

    def test_empty_gold_rejected(self):
        with pytest.raises(ValueError):
            precision_recall_at_k(["a"], set(), 1)


def test_oracle_equivalence_random_instances():
    rng = np.random.default_rng(42)
    labels = [f"l{i:02d}" for i in range(30)]
    for _ in range(300):
        ranked = list(rng.permutation(labels))[: int(rng.integers(1, 30))]
        gold = set(rng.choice(labels, size=int(rng.integers(1, 12)), replace=False))
        k = int(rng.integers(1, 15))
        p, r = precision_recall_at_k(ranked, gold, k)
        got = (p, r, rp_at_k(ranked, gold, k), ndcg_at_k(ranked, gold, k))
        assert got == pytest.approx(oracle_metrics(ranked, gold, k), abs=1e-12)


class TestEvaluateBuckets:
    def make_buckets(self, counts, t_freq=2):
        records = []
        i = 0
        for label, n in counts.items():
            for _ in range(n):
                records.append((f"t{i}", ["w"], [label]))
                i += 1
        return bucketize_labels(make_corpus(records, universe=sorted(counts)), t_freq)

    def test_single_bucket_equals_overall(self):
        buckets = self.make_buckets({"a": 5, "b": 5, "c": 5})
        preds = [RankedPrediction("d1", ("a", "c", "b")), RankedPrediction("d2", ("b", "a", "c"))]
        golds = {"d1": {"a", "b"}, "d2": {"c"}}
        report = evaluate_buckets(preds, golds, buckets, k=2)
        assert report.buckets["frequent"].means == report.overall.means
        assert report.buckets["few"].doc_count == 0

    def test_documents_without_bucket_gold_are_skipped_per_bucket(self):
        buckets = self.make_buckets({"a": 5, "b": 1})
        preds = [RankedPrediction("d1", ("a", "b")), RankedPrediction("d2", ("b", "a"))]
        golds = {"d1": {"a"}, "d2": {"a", "b"}}
        report = evaluate_buckets(preds, golds, buckets, k=1)
        assert report.overall.doc_count == 2
        assert report.buckets["few"].doc_count == 1  # only d2 has a few-shot gold
        assert report.buckets["few"].skipped == 1

    def test_restricted_protocol_drops_other_labels_from_ranking(self):
        buckets = self.make_buckets({"a": 5, "b": 1})
        preds = [RankedPrediction("d", ("a", "b"))]
        golds = {"d": {"a", "b"}}
        restricted = evaluate_buckets(preds, golds, buckets, k=1, protocol="restricted")
        full = evaluate_buckets(preds, golds, buckets, k=1, protocol="full")
        # few bucket: ranking restricted to {b} puts b first; full ranking keeps a first
        assert restricted.buckets["few"].means["P"] == 1.0
        assert full.buckets["few"].means["P"] == 0.0

    def test_matches_bruteforce_recomputation(self):
        rng = np.random.default_rng(3)
        labels = [f"l{i}" for i in range(12)]
        buckets = self.make_buckets({l: int(rng.integers(0, 5)) for l in labels})
        preds, golds = [], {}
        for d in range(25):
            ranked = tuple(rng.permutation(labels)[: int(rng.integers(1, 12))])
            gold = set(rng.choice(labels, size=int(rng.integers(1, 5)), replace=False))
            preds.append(RankedPrediction(f"d{d}", ranked))
            golds[f"d{d}"] = gold
        k = 4
        report = evaluate_buckets(preds, golds, buckets, k=k)
        rows = [oracle_metrics(p.labels, golds[p.doc_id], k) for p in preds]
        means = [sum(col) / len(rows) for col in zip(*rows)]
        for name, expected in zip(("P", "R", "RP", "nDCG"), means):
            assert report.overall.means[name] == pytest.approx(expected, abs=1e-12)
        for bucket_name, bucket_labels in buckets.as_dict().items():
            rows = []
            for p in preds:
                gold = golds[p.doc_id] & bucket_labels
                if not gold:
                    continue
                ranked = [l for l in p.labels if l in bucket_labels]
                rows.append(oracle_metrics(ranked, gold, k))
            if rows:
                means = [sum(col) / len(rows) for col in zip(*rows)]
                for name, expected in zip(("P", "R", "RP", "nDCG"), means):
                    assert report.buckets[bucket_name].means[name] == pytest.approx(
                        expected, abs=1e-12
                    )

    def test_empty_gold_documents_skipped_not_zeroed(self):
        preds = [RankedPrediction("d1", ("a",)), RankedPrediction("d2", ("a",))]
        golds = {"d1": {"a"}, "d2": set()}
        report = evaluate_buckets(preds, golds, None, k=1)
        assert report.overall.doc_count == 1
        assert report.overall.skipped == 1
        assert report.overall.means["P"] == 1.0

    def test_unknown_doc_id_rejected(self):
        with pytest.raises(KeyError, match="unknown document id"):
            evaluate_buckets([RankedPrediction("dx", ("a",))], {}, None, k=1)

    def test_mean_invariant_to_document_order(self):
        preds = [RankedPrediction("d1", ("a", "b")), RankedPrediction("d2", ("b", "a"))]
        golds = {"d1": {"a"}, "d2": {"a"}}
        fwd = evaluate_buckets(preds, golds, None, k=2)
        rev = evaluate_buckets(preds[::-1], golds, None, k=2)
        assert fwd.overall.means == rev.overall.means

    def test_table_mentions_headers(self):
        report = evaluate_buckets(
            [RankedPrediction("d", ("a",))], {"d": {"a"}}, None, k=5
        )
        table = report.format_table()
        assert "RP@5" in table and "nDCG@5" in table


def test_prediction_dump_round_trip(tmp_path):
    preds = [
        RankedPrediction("d1", ("a", "b"), (0.9, 0.1)),
        RankedPrediction("d2", ("c",), (0.5,)),
    ]
    save_predictions(preds, tmp_path / "p.jsonl")
    assert load_predictions(tmp_path / "p.jsonl") == preds


def test_duplicate_label_in_ranking_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        RankedPrediction("d", ("a", "a"))

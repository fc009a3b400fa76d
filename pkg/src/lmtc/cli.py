"""Command-line entry point: reproducible ingest / analyze / train / predict / evaluate runs.

Every subcommand accepts ``--config FILE`` (TOML; one table per
subcommand, e.g. ``[train.plt]``) with flags taking precedence over the
file.  Commands producing artifacts write a ``<output>.manifest.json``
side-car carrying the resolved configuration, its hash, the seed, and
the package version, which is enough to reproduce the run bit for bit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, adapters, corpus as corpus_mod, hierarchy as hierarchy_mod
from . import labelrep, labeltree, metrics as metrics_mod, neural
from .container import ContainerError, peek_kind

logger = logging.getLogger(__name__)

_ERRORS = (
    ValueError,
    KeyError,
    OSError,
    ContainerError,
    corpus_mod.DatasetError,
    hierarchy_mod.HierarchyError,
    neural.TrainingDiverged,
)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _section(config: dict, dotted: str) -> dict:
    node = config
    for part in dotted.split("."):
        node = node.get(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"config section {dotted} must be a table")
    return node


def _resolve(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """Merge defaults < config file < command-line flags."""
    resolved = dict(defaults)
    for key, value in section.items():
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        resolved[key] = value
    for key in defaults:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _write_manifest(output: str, command: str, resolved: dict) -> None:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    manifest = {
        "command": command,
        "config": resolved,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": resolved.get("seed"),
        "version": __version__,
    }
    with open(str(output) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def _require_seed(resolved: dict) -> int:
    if resolved.get("seed") is None:
        raise ValueError("seed is required (pass --seed or set it in the config file)")
    return int(resolved["seed"])


def _default_threads() -> int:
    return int(os.environ.get("LMTC_THREADS", "1"))


# ------------------------------------------------------------------ ingest

INGEST_DEFAULTS = {
    "format": None,
    "input": None,
    "output": None,
    "labels-output": None,
    "hierarchy": None,
    "id-column": "HADM_ID",
    "text-column": "TEXT",
    "labels-column": "LABELS",
    "shuffle-seed": None,
}


def cmd_ingest(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "ingest"), INGEST_DEFAULTS)
    fmt, src, out = resolved["format"], resolved["input"], resolved["output"]
    if fmt not in adapters.ADAPTERS:
        raise ValueError(f"unknown format {fmt!r}; supported adapters: {', '.join(adapters.ADAPTERS)}")
    if not src or not out:
        raise ValueError("--input and --output are required")
    labels_out = resolved["labels-output"]
    if fmt == "eurlex":
        count = adapters.convert_eurlex(src, out, labels_out)
    elif fmt == "mimic":
        count = adapters.convert_mimic(
            src,
            out,
            labels_out,
            id_column=resolved["id-column"],
            text_column=resolved["text-column"],
            labels_column=resolved["labels-column"],
        )
    elif fmt == "amazon":
        graph = (
            hierarchy_mod.load_hierarchy(resolved["hierarchy"]) if resolved["hierarchy"] else None
        )
        count = adapters.convert_amazon(src, out, labels_out, graph=graph)
    else:  # canonical: validate + rewrite in canonical form
        data = corpus_mod.load_dataset(src)
        corpus_mod.save_dataset(data, out)
        if labels_out:
            corpus_mod.save_label_universe(sorted(data.label_universe), labels_out)
        count = data.doc_count
    if resolved["shuffle-seed"] is not None:
        base = int(resolved["shuffle-seed"])
        data = corpus_mod.load_dataset(out)
        data.documents = [
            corpus_mod.shuffle_tokens(doc, base + i) for i, doc in enumerate(data.documents)
        ]
        corpus_mod.save_dataset(data, out)
    print(f"ingested {count} records -> {out}")
    _write_manifest(out, "ingest", resolved)
    return 0


# ----------------------------------------------------------------- analyze

ANALYZE_DEFAULTS = {
    "dataset": None,
    "train": None,
    "hierarchy": None,
    "descriptors": None,
    "t-freq": 50,
    "output": None,
}


def cmd_analyze(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "analyze"), ANALYZE_DEFAULTS)
    if not resolved["dataset"] or not resolved["hierarchy"] or not resolved["output"]:
        raise ValueError("--dataset, --hierarchy and --output are required")
    graph = hierarchy_mod.load_hierarchy(resolved["hierarchy"], resolved["descriptors"])
    data = corpus_mod.load_dataset(resolved["dataset"])
    train = (
        corpus_mod.load_dataset(resolved["train"], split="train")
        if resolved["train"]
        else data
    )
    gap = hierarchy_mod.gap_dataset(graph, data)
    buckets = hierarchy_mod.bucketize_labels(train, int(resolved["t-freq"]))
    report = {
        "mean_gap": gap.mean_gap,
        "density": gap.density,
        "avg_labels_per_doc": gap.avg_labels_per_doc,
        "doc_count": gap.doc_count,
        "skipped_docs": gap.skipped_docs,
        "bucket_sizes": {
            "frequent": len(buckets.frequent),
            "few": len(buckets.few),
            "zero": len(buckets.zero),
        },
        "t_freq": buckets.thresholds[0],
        "per_label_counts": {l: buckets.counts[l] for l in sorted(buckets.counts)},
    }
    with open(resolved["output"], "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"analyze: gap={gap.mean_gap:.4f} density={gap.density:.6f} "
        f"l_avg={gap.avg_labels_per_doc:.2f} -> {resolved['output']}"
    )
    _write_manifest(resolved["output"], "analyze", resolved)
    return 0


# --------------------------------------------------------------- train plt

TRAIN_PLT_DEFAULTS = {
    "train": None,
    "output": None,
    "vocab-output": None,
    "seed": None,
    "ngram-max": 5,
    "max-features": 200_000,
    "k": 2,
    "m": 100,
    "beam": 10,
    "l2": 1.0,
    "weight-prune-eps": 0.01,
    "threads": None,
}


def cmd_train_plt(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "train.plt"), TRAIN_PLT_DEFAULTS)
    if not resolved["train"] or not resolved["output"] or not resolved["vocab-output"]:
        raise ValueError("--train, --output and --vocab-output are required")
    seed = _require_seed(resolved)
    threads = int(resolved["threads"]) if resolved["threads"] is not None else _default_threads()
    train = corpus_mod.load_dataset(resolved["train"], split="train")
    vocab = corpus_mod.build_vocabulary(
        train, int(resolved["ngram-max"]), int(resolved["max-features"])
    )
    vocab.save(resolved["vocab-output"])
    features = [corpus_mod.vectorize_tfidf(doc, vocab) for doc in train.documents]
    config = labeltree.PLTreeConfig(
        k=int(resolved["k"]),
        m=int(resolved["m"]),
        beam=int(resolved["beam"]),
        l2=float(resolved["l2"]),
        weight_prune_eps=float(resolved["weight-prune-eps"]),
    )
    vectors = labeltree.label_feature_vectors(train, features, vocab.size)
    tree = labeltree.build_tree(vectors, config, seed, feature_dim=vocab.size)
    labeltree.train_node_classifiers(tree, train, features, threads=threads)
    labeltree.save_tree(tree, resolved["output"], vocab_version=vocab.version)
    print(
        f"train plt: {len(tree.labels)} labels, {len(tree.nodes)} nodes, "
        f"vocab {vocab.size} -> {resolved['output']}"
    )
    _write_manifest(resolved["output"], "train plt", resolved)
    return 0


# -------------------------------------------------------------- train lwan

TRAIN_LWAN_DEFAULTS = {
    "variant": "base",
    "train": None,
    "dev": None,
    "labels": None,
    "embeddings": None,
    "hierarchy": None,
    "descriptors": None,
    "node2vec": None,
    "output": None,
    "log-output": None,
    "seed": None,
    "encoder": "bigru",
    "layers": 1,
    "hidden": 100,
    "dropout": 0.1,
    "word-dropout": 0.0,
    "train-embeddings": False,
    "lr": 1e-3,
    "batch-size": 16,
    "max-epochs": 30,
    "patience": 5,
    "gcn-hidden": 100,
    "oov-policy": "skip",
}


def cmd_train_lwan(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "train.lwan"), TRAIN_LWAN_DEFAULTS)
    variant = resolved["variant"]
    if variant not in neural.VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {neural.VARIANTS}")
    for key in ("train", "dev", "embeddings", "output"):
        if not resolved[key]:
            raise ValueError(f"--{key} is required")
    # fail fast on variant-inconsistent inputs, before any data loading
    if variant != "base" and not (resolved["hierarchy"] and resolved["descriptors"]):
        raise ValueError(
            f"variant {variant} needs --hierarchy and --descriptors for label vectors"
        )
    if variant in ("DN", "DNC", "GNC") and not resolved["node2vec"]:
        raise ValueError(f"variant {variant} needs --node2vec label vectors")
    seed = _require_seed(resolved)

    universe = (
        corpus_mod.load_label_universe(resolved["labels"]) if resolved["labels"] else None
    )
    train_corpus = corpus_mod.load_dataset(resolved["train"], split="train", label_universe=universe)
    dev_corpus = corpus_mod.load_dataset(
        resolved["dev"], split="dev", label_universe=universe or train_corpus.label_universe
    )
    labels = universe or tuple(
        sorted(set(train_corpus.label_universe) | set(dev_corpus.label_universe))
    )
    embeddings = corpus_mod.load_embeddings(resolved["embeddings"], oov_policy=resolved["oov-policy"])

    graph = None
    label_vectors = None
    if variant != "base":
        graph = hierarchy_mod.load_hierarchy(resolved["hierarchy"], resolved["descriptors"])
        centroid = labelrep.centroid_label_vectors(graph, embeddings)
        walked = None
        if resolved["node2vec"]:
            walked = labelrep.load_label_vectors(resolved["node2vec"], "node2vec").subset(
                graph.labels
            )
        label_vectors = labelrep.compose_label_inputs(
            neural.VARIANT_INPUTS[variant], centroid, walked
        )

    encoder = neural.EncoderConfig(
        kind=resolved["encoder"],
        layers=int(resolved["layers"]),
        hidden=int(resolved["hidden"]),
        dropout=float(resolved["dropout"]),
        word_dropout=float(resolved["word-dropout"]),
        train_embeddings=bool(resolved["train-embeddings"]),
    )
    config = neural.TrainConfig(
        variant=variant,
        lr=float(resolved["lr"]),
        batch_size=int(resolved["batch-size"]),
        max_epochs=int(resolved["max-epochs"]),
        patience=int(resolved["patience"]),
        seed=seed,
        gcn_hidden=int(resolved["gcn-hidden"]),
    )
    result = neural.train(
        config,
        encoder,
        train_corpus,
        dev_corpus,
        embeddings,
        label_vectors=label_vectors,
        graph=graph,
        labels=labels,
    )
    neural.save_model(result.model, resolved["output"])
    log_path = resolved["log-output"] or str(resolved["output"]) + ".train_log.json"
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "epochs": result.history,
                "best_epoch": result.best_epoch,
                "stopped_epoch": result.stopped_epoch,
                "skipped_docs": result.skipped_docs,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    best = result.history[result.best_epoch - 1]["dev_loss"] if result.history else float("nan")
    print(
        f"train lwan[{variant}]: best dev loss {best:.6f} at epoch {result.best_epoch}, "
        f"stopped after epoch {result.stopped_epoch} -> {resolved['output']}"
    )
    _write_manifest(resolved["output"], "train lwan", resolved)
    return 0


# ---------------------------------------------------------- embed node2vec

EMBED_DEFAULTS = {
    "hierarchy": None,
    "descriptors": None,
    "output": None,
    "seed": None,
    "p": 1.0,
    "q": 1.0,
    "walk-len": 40,
    "walks-per-node": 10,
    "window": 5,
    "negatives": 5,
    "dim": 100,
    "epochs": 5,
}


def cmd_embed_node2vec(args: argparse.Namespace) -> int:
    resolved = _resolve(
        args, _section(_load_config(args.config), "embed.node2vec"), EMBED_DEFAULTS
    )
    if not resolved["hierarchy"] or not resolved["output"]:
        raise ValueError("--hierarchy and --output are required")
    seed = _require_seed(resolved)
    graph = hierarchy_mod.load_hierarchy(resolved["hierarchy"], resolved["descriptors"])
    config = labelrep.WalkConfig(
        p=float(resolved["p"]),
        q=float(resolved["q"]),
        walk_len=int(resolved["walk-len"]),
        walks_per_node=int(resolved["walks-per-node"]),
        window=int(resolved["window"]),
        negatives=int(resolved["negatives"]),
        dim=int(resolved["dim"]),
        epochs=int(resolved["epochs"]),
        seed=seed,
    )
    walks = labelrep.node2vec_walks(graph, config)
    vectors, losses = labelrep.train_skipgram(walks, config, labels=graph.labels)
    labelrep.save_label_vectors(vectors, resolved["output"])
    print(
        f"embed node2vec: {len(walks)} walks over {graph.label_count} labels, "
        f"loss {losses[0]:.4f} -> {losses[-1]:.4f} -> {resolved['output']}"
    )
    _write_manifest(resolved["output"], "embed node2vec", resolved)
    return 0


# ----------------------------------------------------------------- predict

PREDICT_DEFAULTS = {
    "model": None,
    "dataset": None,
    "vocab": None,
    "top-k": 10,
    "output": None,
}


def cmd_predict(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "predict"), PREDICT_DEFAULTS)
    if not resolved["model"] or not resolved["dataset"] or not resolved["output"]:
        raise ValueError("--model, --dataset and --output are required")
    top_k = int(resolved["top-k"])
    data = corpus_mod.load_dataset(resolved["dataset"], split="test")
    kind = peek_kind(resolved["model"])
    if kind == "plt":
        if not resolved["vocab"]:
            raise ValueError("PLT models need --vocab (the vocabulary saved at training time)")
        vocab = corpus_mod.Vocabulary.load(resolved["vocab"])
        tree, trained_version = labeltree.load_tree(resolved["model"])
        if trained_version is not None and vocab.version != trained_version:
            raise ValueError(
                f"model/vocabulary version mismatch: model was trained with vocabulary "
                f"{trained_version}, got {vocab.version}"
            )
        preds = []
        for doc in data.documents:
            vec = corpus_mod.vectorize_tfidf(doc, vocab)
            ranking = labeltree.predict(tree, vec, top_k)
            preds.append(
                metrics_mod.RankedPrediction(
                    doc_id=doc.id,
                    labels=tuple(l for l, _ in ranking),
                    scores=tuple(s for _, s in ranking),
                )
            )
    elif kind == "lwan":
        model = neural.load_model(resolved["model"])
        preds = neural.predict_ranking(model, data.documents, top_k)
    else:
        raise ValueError(f"{resolved['model']}: unknown model kind {kind!r}")
    metrics_mod.save_predictions(preds, resolved["output"])
    print(f"predict: {len(preds)} documents, top-{top_k} -> {resolved['output']}")
    _write_manifest(resolved["output"], "predict", resolved)
    return 0


# ---------------------------------------------------------------- evaluate

EVALUATE_DEFAULTS = {
    "predictions": None,
    "gold": None,
    "train": None,
    "t-freq": 50,
    "k": None,
    "protocol": "restricted",
    "output": None,
    "table-output": None,
}


def cmd_evaluate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _section(_load_config(args.config), "evaluate"), EVALUATE_DEFAULTS)
    if not resolved["predictions"] or not resolved["gold"] or not resolved["output"]:
        raise ValueError("--predictions, --gold and --output are required")
    ks = resolved["k"] or [5]
    if isinstance(ks, int):
        ks = [ks]
    preds = metrics_mod.load_predictions(resolved["predictions"])
    gold_corpus = corpus_mod.load_dataset(resolved["gold"], split="test")
    golds = {doc.id: doc.gold_labels for doc in gold_corpus.documents}
    buckets = None
    if resolved["train"]:
        train = corpus_mod.load_dataset(resolved["train"], split="train")
        # bucket counts come from training assignments; the universe must
        # still cover labels that only appear in the evaluation split
        universe = tuple(sorted(set(train.label_universe) | set(gold_corpus.label_universe)))
        train = corpus_mod.Corpus(split="train", documents=train.documents, label_universe=universe)
        buckets = hierarchy_mod.bucketize_labels(train, int(resolved["t-freq"]))
    reports = {}
    tables = []
    for k in ks:
        report = metrics_mod.evaluate_buckets(
            preds, golds, buckets, int(k), protocol=resolved["protocol"]
        )
        reports[str(k)] = report.to_json()
        tables.append(report.format_table())
    with open(resolved["output"], "w", encoding="utf-8") as fh:
        json.dump(reports, fh, sort_keys=True, indent=2)
        fh.write("\n")
    table_text = "\n".join(tables)
    table_path = resolved["table-output"] or str(resolved["output"]) + ".txt"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(table_text)
    print(table_text, end="")
    print(f"evaluate: K={list(map(int, ks))} -> {resolved['output']}")
    _write_manifest(resolved["output"], "evaluate", resolved)
    return 0


# -------------------------------------------------------------------- main


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override it")


def _add_options(parser: argparse.ArgumentParser, defaults: dict, **types) -> None:
    for key in defaults:
        flag = "--" + key
        kwargs: dict = {"default": None}
        if key in types:
            kwargs.update(types[key])
        elif isinstance(defaults[key], bool):
            kwargs["action"] = "store_true"
            kwargs["default"] = None
        elif isinstance(defaults[key], int):
            kwargs["type"] = int
        elif isinstance(defaults[key], float):
            kwargs["type"] = float
        parser.add_argument(flag, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmtc",
        description="Multi-label text classification: label trees, attention models, "
        "hierarchy analysis, and ranking evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"lmtc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert source dumps to the canonical JSONL format")
    _add_common(p)
    _add_options(p, INGEST_DEFAULTS, **{"shuffle-seed": {"type": int}})
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="hierarchy proximity, density, and bucket report")
    _add_common(p)
    _add_options(p, ANALYZE_DEFAULTS)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a model")
    train_sub = p.add_subparsers(dest="method", required=True)
    tp = train_sub.add_parser("plt", help="probabilistic label tree on TF-IDF features")
    _add_common(tp)
    _add_options(tp, TRAIN_PLT_DEFAULTS, seed={"type": int}, threads={"type": int})
    tp.set_defaults(func=cmd_train_plt)
    tl = train_sub.add_parser("lwan", help="label-wise attention network")
    _add_common(tl)
    _add_options(tl, TRAIN_LWAN_DEFAULTS, seed={"type": int})
    tl.set_defaults(func=cmd_train_lwan)

    p = sub.add_parser("embed", help="pretrain label vectors")
    embed_sub = p.add_subparsers(dest="method", required=True)
    en = embed_sub.add_parser("node2vec", help="skip-gram over hierarchy random walks")
    _add_common(en)
    _add_options(en, EMBED_DEFAULTS, seed={"type": int})
    en.set_defaults(func=cmd_embed_node2vec)

    p = sub.add_parser("predict", help="rank labels for a dataset split")
    _add_common(p)
    _add_options(p, PREDICT_DEFAULTS)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold labels")
    _add_common(p)
    _add_options(p, EVALUATE_DEFAULTS, k={"type": int, "action": "append"})
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

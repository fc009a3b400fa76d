"""Convert source dataset dumps into the canonical JSONL format.

Three adapters cover the common source layouts:

``eurlex``
    A directory of one JSON file per document with a ``celex_id`` (or
    ``id``), text fields (``title``, ``header``, ``recitals``,
    ``main_body``, ``attachments``; strings or lists of strings), and a
    ``concepts`` (or ``labels``) list.

``mimic``
    A CSV export with one row per document: an id column, a free-text
    column, and a label column of ``;``-separated codes.  Column names
    default to ``HADM_ID`` / ``TEXT`` / ``LABELS``.

``amazon``
    JSON lines with an ``asin`` (or ``uid``/``id``), ``title`` and
    ``description`` (or ``content``), and a ``categories`` (or
    ``labels``) list.  Pass a hierarchy to also assign every ancestor of
    each category, matching this annotation regime.

Each adapter writes canonical records plus a sorted label-universe file
and returns the record count.  Converting the same input twice yields
byte-identical output.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from .corpus import DatasetError, save_label_universe, tokenize
from .hierarchy import LabelGraph

logger = logging.getLogger(__name__)

ADAPTERS = ("canonical", "eurlex", "mimic", "amazon")


def _write_canonical(records, out_path: Path, labels_path: Path | None) -> int:
    universe: set[str] = set()
    seen: set[str] = set()
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for doc_id, tokens, labels in records:
            if doc_id in seen:
                raise DatasetError(f"duplicate document id {doc_id}")
            seen.add(doc_id)
            universe.update(labels)
            rec = {"id": doc_id, "labels": sorted(labels), "tokens": list(tokens)}
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    if labels_path is not None:
        save_label_universe(sorted(universe), labels_path)
    logger.info("wrote %d records to %s (%d labels)", count, out_path, len(universe))
    return count


def _text_of(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return " ".join(_text_of(v) for v in value)
    return str(value)


def convert_eurlex(input_dir: str | Path, out_path: str | Path, labels_path=None) -> int:
    input_dir = Path(input_dir)
    files = sorted(input_dir.glob("*.json"))
    if not files:
        raise DatasetError(f"{input_dir}: no .json documents found")

    def records():
        for path in files:
            with open(path, encoding="utf-8") as fh:
                try:
                    rec = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path}: malformed JSON: {exc}") from exc
            doc_id = rec.get("celex_id") or rec.get("id")
            if not doc_id:
                raise DatasetError(f"{path}: record has no celex_id or id")
            text = " ".join(
                _text_of(rec.get(k))
                for k in ("title", "header", "recitals", "main_body", "attachments")
            )
            labels = rec.get("concepts", rec.get("labels"))
            if labels is None:
                raise DatasetError(f"{path}: record has no concepts or labels")
            yield str(doc_id), tokenize(text), [str(l) for l in labels]

    return _write_canonical(records(), Path(out_path), labels_path and Path(labels_path))


def convert_mimic(
    csv_path: str | Path,
    out_path: str | Path,
    labels_path=None,
    id_column: str = "HADM_ID",
    text_column: str = "TEXT",
    labels_column: str = "LABELS",
) -> int:
    csv_path = Path(csv_path)

    def records():
        with open(csv_path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DatasetError(f"{csv_path}: empty CSV")
            for col in (id_column, text_column, labels_column):
                if col not in reader.fieldnames:
                    raise DatasetError(f"{csv_path}: missing column {col!r}")
            for lineno, row in enumerate(reader, start=2):
                labels = [l for l in (row[labels_column] or "").split(";") if l]
                doc_id = row[id_column]
                if not doc_id:
                    raise DatasetError(f"{csv_path}:{lineno}: empty document id")
                yield doc_id, tokenize(row[text_column] or ""), labels

    return _write_canonical(records(), Path(out_path), labels_path and Path(labels_path))


def convert_amazon(
    jsonl_path: str | Path,
    out_path: str | Path,
    labels_path=None,
    graph: LabelGraph | None = None,
) -> int:
    jsonl_path = Path(jsonl_path)

    def close_ancestors(labels: list[str]) -> list[str]:
        if graph is None:
            return labels
        closed = set(labels)
        stack = list(labels)
        while stack:
            label = stack.pop()
            if not graph.has_label(label):
                raise DatasetError(f"label {label} not in the hierarchy")
            for parent in graph.parents[label]:
                if parent not in closed:
                    closed.add(parent)
                    stack.append(parent)
        return sorted(closed)

    def records():
        with open(jsonl_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{jsonl_path}:{lineno}: malformed record: {exc}") from exc
                doc_id = rec.get("asin") or rec.get("uid") or rec.get("id")
                if not doc_id:
                    raise DatasetError(f"{jsonl_path}:{lineno}: record has no asin/uid/id")
                text = _text_of(rec.get("title", "")) + " " + _text_of(
                    rec.get("description", rec.get("content", ""))
                )
                labels = rec.get("categories", rec.get("labels"))
                if labels is None:
                    raise DatasetError(f"{jsonl_path}:{lineno}: record has no categories or labels")
                yield str(doc_id), tokenize(text), close_ancestors([str(l) for l in labels])

    return _write_canonical(records(), Path(out_path), labels_path and Path(labels_path))

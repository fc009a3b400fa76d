"""Self-describing binary container for model artifacts.

Layout (all little-endian):

    bytes 0..7    magic ``LMTCBIN\\x00``
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 header length in bytes
    header        UTF-8 JSON: {"kind", "meta", "sections": [...]}
    payload       raw array data, sections back to back

Each section entry records name, dtype (numpy little-endian string such
as ``<f4``), shape, and byte offset into the payload.  Section order and
JSON key order are canonical, so identical inputs produce byte-identical
files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"LMTCBIN\x00"
VERSION = 1


class ContainerError(ValueError):
    """Raised on malformed or incompatible container files."""


def _little_endian(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``arrays`` plus JSON ``meta`` under a ``kind`` tag to ``path``."""
    sections = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = _little_endian(arrays[name])
        raw = arr.tobytes()
        sections.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta, "sections": sections},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def _read_header(fh, path) -> dict:
    magic = fh.read(8)
    if magic != MAGIC:
        raise ContainerError(f"{path}: not a model container (bad magic)")
    version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    header_len = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
    return json.loads(fh.read(header_len).decode("utf-8"))


def peek_kind(path: str | Path) -> str:
    """Read only the header and return the container's kind tag."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)["kind"]


def load_container(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read a container; returns ``(kind, meta, arrays)``."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        payload = fh.read()
    arrays = {}
    for sec in header["sections"]:
        raw = payload[sec["offset"] : sec["offset"] + sec["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(sec["dtype"])).reshape(sec["shape"])
        arrays[sec["name"]] = arr.copy()
    return header["kind"], header["meta"], arrays

"""Versioned binary container for checkpoints and dataset caches.

Layout: 4-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then the named float64 payloads concatenated little-endian in
header order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TRPC"
FORMAT_VERSION = 1


def write_container(path, kind: str, meta: dict, arrays: list) -> None:
    """Write ``arrays`` (list of (name, float64 ndarray)) under a JSON header."""
    header = {
        "container": kind,
        "meta": meta,
        "arrays": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path, expect_kind: str | None = None):
    """Read a container, returning ``(kind, meta, ordered name->array dict)``."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tripcast container (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported container version {version}"
            )
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    kind = header["container"]
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"{path}: expected {expect_kind} container, found {kind}")
    return kind, header["meta"], arrays


def _as_path(p) -> Path:
    return p if isinstance(p, Path) else Path(p)

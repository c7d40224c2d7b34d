"""On-disk matrix cache shared by feature matrices and harvested states.

Binary layout: one UTF-8 JSON header line terminated by ``\\n``, followed by
the row-major little-endian payload. The header carries ``shape``, ``dtype``
and whatever metadata the caller supplied (method, config, split). CSV
export uses the same header as a leading ``#`` comment line followed by one
row per item.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = "PRC-MATRIX-1"


class CacheFormatError(ValueError):
    pass


def config_hash(obj: Mapping[str, Any]) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_matrix(path, array: np.ndarray, meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder("<")
    header = {"magic": MAGIC, "shape": list(array.shape), "dtype": dtype.str,
              "meta": dict(meta or {})}
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, default=str).encode() + b"\n")
        fh.write(array.astype(dtype, copy=False).tobytes())
    os.replace(tmp, path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CacheFormatError(f"{path}: header is not JSON") from exc
    if header.get("magic") != MAGIC:
        raise CacheFormatError(f"{path}: not a matrix cache file")
    return header


def read_matrix(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    header = json.loads(line)
    if header.get("magic") != MAGIC:
        raise CacheFormatError(f"{path}: not a matrix cache file")
    dtype = np.dtype(header["dtype"])
    shape = tuple(header["shape"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise CacheFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy(), header["meta"]


def write_csv(path, array: np.ndarray, meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.atleast_2d(array)
    header = json.dumps({"magic": MAGIC, "shape": list(array.shape), "meta": dict(meta or {})},
                        sort_keys=True, default=str)
    np.savetxt(path, array, delimiter=",", fmt="%.17g", header=header, comments="# ")
    return path


def read_csv(path) -> tuple[np.ndarray, dict]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# "):
        raise CacheFormatError(f"{path}: missing header line")
    header = json.loads(first[2:])
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data.reshape(header["shape"]), header["meta"]


class MatrixCache:
    """Directory of cached matrices addressed by ``(kind, key, split)``.

    A ``None`` root disables caching: lookups miss and stores are dropped.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None

    def path(self, kind: str, key: str, split: str) -> Path | None:
        if self.root is None:
            return None
        return self.root / kind / f"{key}.{split}.bin"

    def load(self, kind: str, key: str, split: str) -> np.ndarray | None:
        p = self.path(kind, key, split)
        if p is None or not p.exists():
            return None
        return read_matrix(p)[0]

    def store(self, kind: str, key: str, split: str, array: np.ndarray,
              meta: Mapping[str, Any] | None = None) -> None:
        p = self.path(kind, key, split)
        if p is not None:
            write_matrix(p, array, {"kind": kind, "key": key, "split": split, **(meta or {})})

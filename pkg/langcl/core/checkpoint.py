"""Versioned flat archive of named arrays.

Layout::

    MAGIC (8 bytes) | index length (<u4) | index (UTF-8 JSON) | blob

The index lists every entry with its name, shape, dtype, byte offset into the
blob, byte count and frozen flag, plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from langcl.core.errors import CheckpointError
from langcl.core.params import ParamStore

MAGIC = b"LANGCL\x00\x01"
FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"<f8": np.dtype("<f8"), "|u1": np.dtype("|u1")}


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    frozen: set[str] = field(default_factory=set)
    meta: dict[str, Any] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        entries = []
        chunks = []
        offset = 0
        for name in sorted(self.arrays):
            array = self.arrays[name]
            dtype = np.dtype("|u1") if array.dtype == np.uint8 else np.dtype("<f8")
            raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
            entries.append(
                {
                    "name": name,
                    "shape": list(array.shape),
                    "dtype": dtype.str,
                    "offset": offset,
                    "nbytes": len(raw),
                    "frozen": name in self.frozen,
                }
            )
            chunks.append(raw)
            offset += len(raw)
        index = json.dumps(
            {"version": FORMAT_VERSION, "entries": entries, "meta": self.meta},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        return MAGIC + struct.pack("<I", len(index)) + index + b"".join(chunks)

    @classmethod
    def from_bytes(cls, payload: bytes) -> Checkpoint:
        if payload[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a langcl checkpoint (bad magic header)")
        head = len(MAGIC) + 4
        if len(payload) < head:
            raise CheckpointError("truncated checkpoint header")
        (index_len,) = struct.unpack("<I", payload[len(MAGIC) : head])
        try:
            index = json.loads(payload[head : head + index_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint index: {e}") from e
        if index.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {index.get('version')}")

        blob = memoryview(payload)[head + index_len :]
        checkpoint = cls(meta=index.get("meta", {}))
        for entry in index.get("entries", []):
            name = entry.get("name", "?")
            try:
                dtype = _ALLOWED_DTYPES[entry["dtype"]]
                shape = tuple(int(s) for s in entry["shape"])
                start, nbytes = int(entry["offset"]), int(entry["nbytes"])
            except (KeyError, TypeError, ValueError):
                raise CheckpointError(f"corrupt index entry '{name}'") from None
            expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if nbytes != expected or start < 0 or start + nbytes > len(blob):
                raise CheckpointError(f"corrupt data for entry '{name}'")
            array = np.frombuffer(blob[start : start + nbytes], dtype=dtype)
            checkpoint.arrays[name] = array.reshape(shape).copy()
            if entry.get("frozen"):
                checkpoint.frozen.add(name)
        return checkpoint

    def save(self, path: Path) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: Path) -> Checkpoint:
        try:
            payload = Path(path).read_bytes()
        except OSError as e:
            raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
        return cls.from_bytes(payload)


def snapshot(params: ParamStore, meta: dict[str, Any] | None = None) -> Checkpoint:
    return Checkpoint(arrays=params.values(), frozen=params.frozen, meta=dict(meta or {}))


def restore(checkpoint: Checkpoint, into: ParamStore | None = None) -> ParamStore:
    """Load a checkpoint into ``into`` (shapes must match) or a fresh store."""
    floats = {n: a for n, a in checkpoint.arrays.items() if a.dtype != np.uint8}
    if into is None:
        store = ParamStore()
        for name, value in floats.items():
            store.add(name, value, frozen=name in checkpoint.frozen)
        return store

    missing = [n for n in into if n not in floats]
    if missing:
        raise CheckpointError(f"checkpoint has no entry for parameter '{missing[0]}'")
    into.load_values(floats)
    for name in into:
        into.set_frozen([name], name in checkpoint.frozen)
    return into


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write to a temporary sibling, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))

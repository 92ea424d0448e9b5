"""Checkpoints: a JSON index (names, shapes, dtype, byte offsets, step) next to a raw little-endian payload."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..dit import DiTConfig
from ..numerics import ParamStore

SCHEMA = "s2vgen.checkpoint/1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def _entries(store: ParamStore):
    for group, table in (("param", store.params), ("adam_m", store.m), ("adam_v", store.v)):
        for name in sorted(table):
            yield group, name, table[name]


def save_checkpoint(store: ParamStore, config: DiTConfig, path, extra: dict | None = None) -> Path:
    """Write ``path`` (.json index) and its ``.bin`` payload; returns the index path.

    Optimizer moments are stored too, so training can resume exactly.
    """
    index_path = Path(path).with_suffix(".json")
    bin_path = index_path.with_suffix(".bin")
    index_path.parent.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for group, name, arr in _entries(store):
        dt = _DTYPES.get(arr.dtype.name)
        if dt is None:
            raise CheckpointError(f"{group}/{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        tensors.append({"group": group, "name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    index = {
        "schema": SCHEMA,
        "step": int(store.step),
        "precision": config.precision,
        "model": config.to_dict(),
        "payload": bin_path.name,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": tensors,
        **(extra or {}),
    }
    tmp = bin_path.with_name(bin_path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, bin_path)
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index_path


def load_checkpoint(path) -> tuple[ParamStore, DiTConfig, dict]:
    index_path = Path(path).with_suffix(".json")
    try:
        index = json.loads(index_path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint index not found: {index_path}") from None
    if index.get("schema") != SCHEMA:
        raise CheckpointError(f"{index_path}: unsupported schema {index.get('schema')!r}")
    payload = (index_path.parent / index["payload"]).read_bytes()
    if len(payload) != index["payload_bytes"]:
        raise CheckpointError(f"payload has {len(payload)} bytes, index expects {index['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != index["payload_sha256"]:
        raise CheckpointError("payload hash mismatch")
    groups: dict[str, dict] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for t in index["tensors"]:
        arr = np.frombuffer(payload, dtype=_DTYPES[t["dtype"]], count=int(np.prod(t["shape"], dtype=np.int64)), offset=t["offset"])
        groups[t["group"]][t["name"]] = arr.reshape(t["shape"]).astype(t["dtype"])
    config = DiTConfig(**index["model"])
    store = ParamStore(groups["param"], groups["adam_m"], groups["adam_v"], index["step"])
    return store, config, index


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def git_blob_hash(path) -> str:
    """Content hash as git computes it for a blob."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

"""Manifest + raw-blob parameter serialization.

A checkpoint directory holds a JSON manifest listing name, shape, dtype and
byte offset per tensor, and one binary blob of little-endian scalars in
manifest order.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import ParamStore

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
_FORMAT = "dppnet-params-v1"
_WIRE_DTYPES = {"f32": "<f4", "f64": "<f8"}


def save_params(store: ParamStore, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    wire = _WIRE_DTYPES[store.precision]
    for name, value in store.items():
        raw = np.ascontiguousarray(value, dtype=wire).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(value.shape),
                "dtype": store.precision,
                "offset": offset,
                "nbytes": len(raw),
                "trainable": store.is_trainable(name),
                "role": store.role(name),
                "frozen": store.is_frozen(name),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": _FORMAT, "byte_order": "little", "entries": entries}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1))
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))


def load_params(directory) -> ParamStore:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    blob_path = directory / BLOB_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"missing manifest {manifest_path}")
    if not blob_path.exists():
        raise CheckpointError(f"missing parameter blob {blob_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest {manifest_path} is not valid JSON: {e}") from e
    if manifest.get("format") != _FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    blob = blob_path.read_bytes()
    entries = manifest["entries"]
    expected = sum(e["nbytes"] for e in entries)
    if len(blob) != expected:
        raise CheckpointError(
            f"blob {blob_path} holds {len(blob)} bytes, manifest expects {expected}"
        )
    precisions = {e["dtype"] for e in entries} or {"f64"}
    if len(precisions) > 1:
        raise CheckpointError(f"mixed dtypes in one checkpoint: {sorted(precisions)}")
    precision = precisions.pop()
    if precision not in _WIRE_DTYPES:
        raise CheckpointError(f"unknown dtype {precision!r} in manifest")
    store = ParamStore(precision)
    frozen = []
    for e in entries:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        flat = np.frombuffer(raw, dtype=_WIRE_DTYPES[precision], count=count)
        if flat.size != count:
            raise CheckpointError(f"entry {e['name']!r} truncated in {blob_path}")
        value = flat.reshape(e["shape"])
        store.add(
            e["name"],
            value,
            trainable=e.get("trainable", True),
            role=e.get("role", "static"),
        )
        if e.get("frozen", False):
            frozen.append(e["name"])
    for name in frozen:
        store.freeze(name)
    return store

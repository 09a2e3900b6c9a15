import json

import numpy as np
import pytest

from dppnet import checkpoint
from dppnet.errors import CheckpointError
from dppnet.tensor import ParamStore


def build_store(precision="f64"):
    rng = np.random.default_rng(9)
    store = ParamStore(precision)
    store.add("a.w", rng.normal(size=(3, 4)))
    store.add("a.b", rng.normal(size=3))
    store.add("stats", rng.normal(size=(2,)), trainable=False)
    store.add("proj.w", rng.normal(size=(2, 2)), role="dynamic-producing")
    store.freeze("a.b")
    return store


@pytest.mark.parametrize("precision", ["f64", "f32"])
def test_round_trip_bit_exact(tmp_path, precision):
    store = build_store(precision)
    checkpoint.save_params(store, tmp_path)
    loaded = checkpoint.load_params(tmp_path)
    assert loaded.names() == store.names()
    for name in store.names():
        assert loaded[name].dtype == store[name].dtype
        assert np.array_equal(loaded[name], store[name])
    assert loaded.is_frozen("a.b")
    assert not loaded.is_trainable("stats")
    assert loaded.role("proj.w") == "dynamic-producing"


def test_save_load_save_is_stable(tmp_path):
    store = build_store()
    checkpoint.save_params(store, tmp_path / "one")
    loaded = checkpoint.load_params(tmp_path / "one")
    checkpoint.save_params(loaded, tmp_path / "two")
    assert (tmp_path / "one" / "params.bin").read_bytes() == (
        tmp_path / "two" / "params.bin"
    ).read_bytes()


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError, match="manifest"):
        checkpoint.load_params(tmp_path)


def test_truncated_blob_rejected(tmp_path):
    store = build_store()
    checkpoint.save_params(store, tmp_path)
    blob = (tmp_path / "params.bin").read_bytes()
    (tmp_path / "params.bin").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="bytes"):
        checkpoint.load_params(tmp_path)


def test_garbled_manifest_rejected(tmp_path):
    store = build_store()
    checkpoint.save_params(store, tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        checkpoint.load_params(tmp_path)


def test_manifest_offsets_are_contiguous(tmp_path):
    store = build_store()
    checkpoint.save_params(store, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    offset = 0
    for entry in manifest["entries"]:
        assert entry["offset"] == offset
        offset += entry["nbytes"]

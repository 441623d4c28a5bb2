import json

import numpy as np
import pytest

from svcomplete.checkpoint import load_checkpoint, save_checkpoint
from svcomplete.config import profile
from svcomplete.errors import DataError
from svcomplete.model import CompletionModel, load_model, save_model


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    named = {
        "layer.weight": rng.normal(size=(7, 5)).astype(np.float32),
        "layer.bias": rng.normal(size=5).astype(np.float32),
        "scalar": np.array([3.25], dtype=np.float32),
    }
    save_checkpoint(tmp_path, named)
    loaded = load_checkpoint(tmp_path)
    assert set(loaded) == set(named)
    for name in named:
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name].view(np.uint32), named[name].view(np.uint32))


def test_manifest_schema(tmp_path):
    save_checkpoint(tmp_path, {"w": np.zeros((2, 3), dtype=np.float32)})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = manifest[0]
    assert entry["name"] == "w"
    assert entry["shape"] == [2, 3]
    assert entry["dtype"] == "f32le"
    assert entry["offset"] == 0
    assert entry["len_bytes"] == 24
    assert (tmp_path / "weights.bin").stat().st_size == 24


def test_offsets_are_contiguous(tmp_path):
    named = {"a": np.zeros(3, dtype=np.float32), "b": np.zeros((2, 2), dtype=np.float32)}
    save_checkpoint(tmp_path, named)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest[1]["offset"] == manifest[0]["len_bytes"]


def test_missing_files_raise_data_error(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_checkpoint(tmp_path / "nope")


def test_corrupt_manifest_raises(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    (tmp_path / "weights.bin").write_bytes(b"")
    with pytest.raises(DataError, match="manifest"):
        load_checkpoint(tmp_path)


def test_out_of_range_blob_raises(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps(
        [{"name": "w", "shape": [4], "dtype": "f32le", "offset": 0, "len_bytes": 16}]))
    (tmp_path / "weights.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(DataError, match="out of range"):
        load_checkpoint(tmp_path)


def test_model_save_load_round_trip(tmp_path):
    cfg = profile("desk")
    model = CompletionModel(cfg, seed=5)
    save_model(tmp_path / "ckpt", model)
    loaded, extras = load_model(tmp_path / "ckpt")
    assert extras == {}
    assert loaded.cfg == cfg
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)


def test_model_load_rejects_shape_mismatch(tmp_path):
    cfg = profile("desk")
    model = CompletionModel(cfg, seed=5)
    save_model(tmp_path / "ckpt", model)
    stored = load_checkpoint(tmp_path / "ckpt")
    name = next(iter(stored))
    stored[name] = np.zeros((1, 1), dtype=np.float32)
    save_checkpoint(tmp_path / "ckpt", stored)
    with pytest.raises(DataError, match="shape"):
        load_model(tmp_path / "ckpt")

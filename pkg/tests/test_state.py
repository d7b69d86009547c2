import json

import numpy as np
import pytest

from hwmamba.errors import DataError
from hwmamba.model import HWMamba, NetConfig
from hwmamba.state import FORMAT_VERSION, ModelState, read_tensors, write_tensors


def test_round_trip_bit_exact(tmp_path, rng):
    model = HWMamba(NetConfig.micro(mlp_kind="plain"), seed=4, dtype=np.float32)
    for t in model.parameters():
        t.data = (t.data + rng.normal(size=t.shape)).astype(np.float32)
    ModelState.from_model(model, step=17).save(tmp_path)
    state = ModelState.load(tmp_path)
    assert state.step == 17 and state.config == model.cfg and state.dtype == "float32"
    restored = state.build()
    for (name, a), (name_b, b) in zip(model.named_parameters(), restored.named_parameters()):
        assert name == name_b
        assert a.data.dtype == b.data.dtype and a.data.tobytes() == b.data.tobytes()
    x = rng.normal(size=(1, 12, 256)).astype(np.float32)
    assert model.predict(x).tobytes() == restored.predict(x).tobytes()


def test_manifest_layout(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float64).reshape(2, 3), "b": np.ones(4, dtype=np.float32)}
    write_tensors(tmp_path, "blob", arrays, {"step": 3})
    manifest = json.loads((tmp_path / "blob.json").read_text())
    assert manifest["format_version"] == FORMAT_VERSION
    entries = {e["name"]: e for e in manifest["tensors"]}
    assert entries["a"] == {"name": "a", "shape": [2, 3], "dtype": "<f8", "offset": 0, "nbytes": 48}
    assert entries["b"]["offset"] == 48 and entries["b"]["dtype"] == "<f4"
    assert (tmp_path / "blob.bin").stat().st_size == 64
    raw = (tmp_path / "blob.bin").read_bytes()
    assert np.frombuffer(raw[:48], dtype="<f8").tolist() == list(range(6))


def test_big_endian_input_is_stored_little_endian(tmp_path):
    arr = np.arange(3, dtype=">f8")
    write_tensors(tmp_path, "x", {"v": arr}, {})
    back, _ = read_tensors(tmp_path, "x")
    np.testing.assert_array_equal(back["v"], arr)


def test_truncated_blob(tmp_path):
    write_tensors(tmp_path, "x", {"v": np.ones(8)}, {})
    (tmp_path / "x.bin").write_bytes(b"\0" * 10)
    with pytest.raises(DataError):
        read_tensors(tmp_path, "x")


def test_version_mismatch(tmp_path):
    write_tensors(tmp_path, "x", {"v": np.ones(2)}, {})
    manifest = json.loads((tmp_path / "x.json").read_text())
    manifest["format_version"] = 99
    (tmp_path / "x.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError):
        read_tensors(tmp_path, "x")


def test_mismatched_state_dict():
    model = HWMamba(NetConfig.micro())
    with pytest.raises(KeyError):
        model.load_state_dict({})

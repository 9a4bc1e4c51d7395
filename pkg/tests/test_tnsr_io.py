import struct

import numpy as np
import pytest

from metaquill.autodiff import Tensor, load_bundle, read_tensor, save_bundle, write_tensor
from metaquill.errors import ValidationError


def test_round_trip_various_ranks(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(), (1,), (7,), (3, 4), (2, 3, 4), (1, 2, 3, 4)]:
        arr = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "t.tnsr"
        write_tensor(p, arr)
        back = read_tensor(p)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_header_layout_exact(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "t.tnsr"
    write_tensor(p, arr)
    raw = p.read_bytes()
    assert raw[:4] == b"TNSR"
    assert raw[4] == 1  # version
    assert raw[5] == 2  # rank
    assert struct.unpack("<2I", raw[6:14]) == (2, 3)
    assert np.frombuffer(raw[14:], dtype="<f4").tolist() == arr.reshape(-1).tolist()


def test_accepts_tensor_objects(tmp_path):
    t = Tensor(np.ones((2, 2)))
    p = tmp_path / "t.tnsr"
    write_tensor(p, t)
    assert np.array_equal(read_tensor(p), t.data)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.tnsr"
    p.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ValidationError):
        read_tensor(p)


def test_truncated_payload_rejected(tmp_path):
    arr = np.ones((4, 4), np.float32)
    p = tmp_path / "t.tnsr"
    write_tensor(p, arr)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValidationError):
        read_tensor(p)


def test_wrong_version_rejected(tmp_path):
    p = tmp_path / "t.tnsr"
    p.write_bytes(b"TNSR" + struct.pack("<BB", 9, 0) + struct.pack("<f", 1.0))
    with pytest.raises(ValidationError):
        read_tensor(p)


def test_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    params = {
        "enc.conv1.k": rng.standard_normal((8, 3, 3, 3)).astype(np.float32),
        "dec.att.W_h": rng.standard_normal((16, 8)).astype(np.float32),
        "dec.att.b": np.float32(0.25),
    }
    save_bundle(tmp_path / "ckpt", params, meta={"step": 3, "seed": 42})
    loaded, manifest = load_bundle(tmp_path / "ckpt")
    assert set(loaded) == set(params)
    for name in params:
        assert np.array_equal(loaded[name], np.asarray(params[name]))
    assert manifest["step"] == 3
    assert manifest["seed"] == 42


def test_bundle_rejects_unsafe_names(tmp_path):
    with pytest.raises(ValidationError):
        save_bundle(tmp_path / "ckpt", {"../evil": np.ones(1, np.float32)})


def test_bundle_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValidationError):
        load_bundle(tmp_path / "empty")

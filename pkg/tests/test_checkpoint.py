import json
import struct

import numpy as np
import pytest

from landsharp import checkpoint as C
from landsharp.nn import ModelSpec, QuadraticModel, build_model, model_loss


@pytest.fixture
def state():
    s = build_model(ModelSpec("Mini10"), 5)
    s.buffers["block0.bn0.running_mean"][:] = np.arange(16, dtype=np.float32) / 7
    s.epoch, s.metrics, s.info = 12, {"dev_accuracy": 0.75}, {"seed": 5, "lr": 1e-3}
    return s


def test_roundtrip_bit_exact(state, tmp_path):
    p = C.save_checkpoint(state, tmp_path / "m.mscp")
    back = C.load_checkpoint(p)
    assert list(back.params) == list(state.params)
    for store_a, store_b in ((state.params, back.params), (state.buffers, back.buffers)):
        for k in store_a:
            assert store_a[k].dtype == store_b[k].dtype
            assert store_a[k].tobytes() == store_b[k].tobytes()
    assert (back.epoch, back.metrics, back.info) == (12, {"dev_accuracy": 0.75}, {"seed": 5, "lr": 1e-3})
    assert back.fingerprint() == state.fingerprint()


def test_save_load_save_byte_identical(state, tmp_path):
    a = C.save_checkpoint(state, tmp_path / "a.mscp").read_bytes()
    b = C.save_checkpoint(C.load_checkpoint(tmp_path / "a.mscp"), tmp_path / "b.mscp").read_bytes()
    assert a == b


def test_payload_is_little_endian_float32(state):
    blob = C.encode(state)
    magic, version, hlen = struct.unpack_from("<4sII", blob)
    header = json.loads(blob[12:12 + hlen])
    assert (magic, version) == (b"MSCP", C.VERSION)
    payload = blob[12 + hlen:]
    assert len(payload) == sum(4 * int(np.prod(e["shape"])) for e in header["manifest"])
    first = header["manifest"][0]
    assert first["dtype"] == "<f4" and first["offset"] == 0
    np.testing.assert_array_equal(np.frombuffer(payload, "<f4", int(np.prod(first["shape"]))),
                                  state.params[first["name"]].ravel())
    assert [e["kind"] for e in header["manifest"]].count("buffer") == 8


def test_quadratic_roundtrip_keeps_float64(tmp_path):
    s = QuadraticModel(np.array([[0.1, 0.2, 0.3]]), np.array([[1.0, 2.0, 3.0]])).state()
    back = C.load_checkpoint(C.save_checkpoint(s, tmp_path / "q.mscp"))
    assert back.params["weight"].dtype == np.float64
    assert model_loss(back, None) == model_loss(s, None)


def test_bad_magic(state):
    blob = bytearray(C.encode(state))
    blob[:4] = b"XXXX"
    with pytest.raises(C.NotACheckpoint, match="not a checkpoint"):
        C.decode(bytes(blob))
    with pytest.raises(C.NotACheckpoint):
        C.decode(b"")


def test_truncated_payload(state):
    with pytest.raises(C.PayloadLengthMismatch, match="payload length mismatch"):
        C.decode(C.encode(state)[:-4])


def test_manifest_mismatch(state):
    state.params["fc.bias"] = np.zeros(11, np.float32)
    with pytest.raises(C.ManifestMismatch):
        C.decode(C.encode(state))


def test_version_mismatch(state):
    blob = bytearray(C.encode(state))
    struct.pack_into("<I", blob, 4, C.VERSION + 1)
    with pytest.raises(C.VersionMismatch):
        C.decode(bytes(blob))


def test_error_kinds_are_distinct():
    kinds = {C.NotACheckpoint, C.PayloadLengthMismatch, C.ManifestMismatch, C.VersionMismatch}
    assert len(kinds) == 4 and all(issubclass(k, C.CheckpointError) for k in kinds)
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)

import numpy as np
import pytest

from lamae import checkpoint as ck
from lamae.model import ModelConfig, init_params


def _tensors(rng):
    return {
        "a.w": rng.normal(size=(3, 4)).astype(np.float32),
        "a.b": rng.normal(size=(4,)),
        "steps": np.array([7], dtype=np.int64),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }


def test_round_trip_bit_exact(tmp_path, rng):
    t = _tensors(rng)
    ck.save(tmp_path / "x.ckpt", t, {"step": 3, "note": "ü"})
    back, meta = ck.load(tmp_path / "x.ckpt")
    assert meta == {"step": 3, "note": "ü"}
    assert list(back) == list(t)
    for k in t:
        assert back[k].dtype == t[k].dtype and back[k].shape == t[k].shape
        assert back[k].tobytes() == t[k].tobytes()


def test_model_params_round_trip(tmp_path):
    p = init_params(ModelConfig.desk(), 0)
    ck.save(tmp_path / "m.ckpt", p.arrays())
    back, _ = ck.load(tmp_path / "m.ckpt")
    assert all(np.array_equal(back[k], v.data) for k, v in p.items())


def test_encoding_is_deterministic(rng):
    t = _tensors(rng)
    assert ck.encode(t) == ck.encode(dict(t))


def test_header_layout(rng):
    blob = ck.encode({"w": np.ones(2, dtype=np.float32)})
    assert blob[:4] == b"LMAE"
    assert int.from_bytes(blob[4:8], "little") == ck.VERSION
    assert int.from_bytes(blob[8:12], "little") == 1


@pytest.mark.parametrize("where", [5, 20, -6])
def test_corruption_detected(tmp_path, rng, where):
    blob = bytearray(ck.encode(_tensors(rng)))
    blob[where] ^= 0xFF
    path = tmp_path / "bad.ckpt"
    path.write_bytes(bytes(blob))
    with pytest.raises(ck.CheckpointError):
        ck.load(path)


def test_bad_magic_truncation_and_missing(tmp_path, rng):
    blob = ck.encode(_tensors(rng))
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.decode(b"XXXX" + blob[4:])
    with pytest.raises(ck.CheckpointError):
        ck.decode(blob[:-10])
    with pytest.raises(ck.CheckpointError, match="not found"):
        ck.load(tmp_path / "nope.ckpt")


def test_unsupported_dtype():
    with pytest.raises(ck.CheckpointError, match="complex"):
        ck.encode({"z": np.ones(2, dtype=np.complex64)})

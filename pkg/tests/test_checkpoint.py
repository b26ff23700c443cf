import numpy as np
import pytest

from fdin.checkpoint import CheckpointError, load_model, read_tensors, save_model, write_tensors
from fdin.config import ModelConfig
from fdin.model import InterpreterNetwork


def _assert_same_state(a, b):
    sa, sb = a.state(), b.state()
    assert sa.keys() == sb.keys()
    for k in sa:
        assert sa[k].dtype == sb[k].dtype
        assert sa[k].tobytes() == sb[k].tobytes()


def test_model_round_trip_bit_exact(tmp_path, rng):
    m = InterpreterNetwork(ModelConfig.tiny(), seed=1)
    for _, arr in m.state().items():
        arr[...] = rng.uniform(0.5, 1.5, size=arr.shape)
    save_model(m, tmp_path / "m.ckpt", meta={"note": "x"})
    back, meta = load_model(tmp_path / "m.ckpt")
    _assert_same_state(m, back)
    assert back.config == m.config and meta == {"note": "x"}
    frames = rng.normal(size=(2, 3, 2, 2, 2))
    np.testing.assert_array_equal(back.predict(frames).y, m.predict(frames).y)


def test_resave_is_byte_identical(tmp_path):
    m = InterpreterNetwork(ModelConfig.tiny(task="gender"), seed=2)
    save_model(m, tmp_path / "a.ckpt")
    back, _ = load_model(tmp_path / "a.ckpt")
    save_model(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_digest_mismatch_refused(tmp_path):
    m = InterpreterNetwork(ModelConfig.tiny(), seed=3)
    save_model(m, tmp_path / "m.ckpt")
    load_model(tmp_path / "m.ckpt", expect_digest=m.config.digest())
    with pytest.raises(CheckpointError, match="digest"):
        load_model(tmp_path / "m.ckpt", expect_digest=ModelConfig.tiny(dropout=0.1).digest())


def test_tampered_config_refused(tmp_path):
    m = InterpreterNetwork(ModelConfig.tiny(), seed=3)
    save_model(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw.replace(b'"dropout": 0.5', b'"dropout": 0.4'))
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "t.ckpt")


def test_bad_magic_version_truncation(tmp_path):
    write_tensors(tmp_path / "t.ckpt", {"a": np.arange(3.0)}, {}, "0" * 64)
    raw = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_tensors(tmp_path / "m.ckpt")
    (tmp_path / "v.ckpt").write_bytes(raw[:8] + (7).to_bytes(4, "little") + raw[12:])
    with pytest.raises(CheckpointError, match="version"):
        read_tensors(tmp_path / "v.ckpt")
    (tmp_path / "s.ckpt").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        read_tensors(tmp_path / "s.ckpt")
    (tmp_path / "x.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        read_tensors(tmp_path / "x.ckpt")


def test_float32_tensors_round_trip(tmp_path):
    t = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "s": np.array(2.5, dtype=np.float32)}
    write_tensors(tmp_path / "t.ckpt", t, {"k": 1}, "a" * 64, {"m": 2})
    back, cfg, digest, meta = read_tensors(tmp_path / "t.ckpt")
    assert cfg == {"k": 1} and digest == "a" * 64 and meta == {"m": 2}
    for k in t:
        assert back[k].dtype == t[k].dtype and back[k].shape == t[k].shape
        np.testing.assert_array_equal(back[k], t[k])


def test_unsupported_dtype_and_digest():
    with pytest.raises(ValueError):
        write_tensors("/nonexistent", {"a": np.arange(3)}, {}, "0" * 64)
    with pytest.raises(ValueError):
        write_tensors("/nonexistent", {}, {}, "short")

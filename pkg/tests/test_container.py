import numpy as np
import pytest

from spade.container import CHECKPOINT_MAGIC, LENS_MAGIC, read_container, write_container
from spade.errors import ShapeError
from spade.model import load_checkpoint, save_checkpoint
from spade.tensor import Rng


def test_roundtrip(tmp_path):
    rng = Rng(5)
    tensors = {"a": rng.normal_array((3, 4)), "b": rng.normal_array((7,))}
    path = tmp_path / "t.bin"
    write_container(path, LENS_MAGIC, {"layer": 2}, tensors)
    meta, got = read_container(path, LENS_MAGIC)
    assert meta["layer"] == 2
    for k in tensors:
        np.testing.assert_array_equal(got[k], tensors[k])


def test_layout(tmp_path):
    """Magic, version, header length, and 64-byte aligned offsets."""
    import json
    import struct

    tensors = {"x": np.ones((5,), dtype=np.float32), "y": np.ones((3, 3), dtype=np.float32)}
    path = tmp_path / "t.bin"
    write_container(path, CHECKPOINT_MAGIC, {}, tensors)
    raw = path.read_bytes()
    assert raw[:8] == b"SPADECKP"
    assert struct.unpack("<I", raw[8:12])[0] == 1
    hlen = struct.unpack("<Q", raw[12:20])[0]
    header = json.loads(raw[20:20 + hlen])
    for entry in header["tensors"]:
        assert entry["offset"] % 64 == 0
        assert entry["dtype"] == "f32"


def test_wrong_magic(tmp_path):
    path = tmp_path / "t.bin"
    write_container(path, LENS_MAGIC, {}, {"a": np.zeros(2, dtype=np.float32)})
    with pytest.raises(ShapeError):
        read_container(path, CHECKPOINT_MAGIC)


def test_byte_determinism(tmp_path):
    tensors = {"a": Rng(1).normal_array((4, 4))}
    p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
    write_container(p1, LENS_MAGIC, {"k": 1}, tensors)
    write_container(p2, LENS_MAGIC, {"k": 1}, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_roundtrip(tmp_path, tiny_ckpt):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tiny_ckpt)
    loaded = load_checkpoint(path)
    assert loaded.config == tiny_ckpt.config
    for name in tiny_ckpt.tensors:
        np.testing.assert_array_equal(loaded.tensors[name], tiny_ckpt.tensors[name])
    # canonical re-serialization is byte-identical
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()

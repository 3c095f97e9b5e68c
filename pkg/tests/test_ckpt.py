import numpy as np
import pytest

from vidinsert.ckpt import MAGIC, load_arrays, pack_meta, save_arrays, unpack_meta
from vidinsert.errors import ContractError


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "deep.nested.name": rng.standard_normal((2, 2, 2)).astype(np.float32),
        "scalarish": np.array([1.5], dtype=np.float32),
        # denormals and signed zero must survive untouched
        "edge": np.array([1e-42, -0.0, 3.4e38, -1e-40], dtype=np.float32),
    }
    path = tmp_path / "model.ckpt"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert list(loaded) == list(arrays)
    for name in arrays:
        assert loaded[name].shape == arrays[name].shape
        assert loaded[name].tobytes() == arrays[name].astype("<f4").tobytes()


def test_file_layout_starts_with_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    save_arrays(path, {"a": np.zeros(2, dtype=np.float32)})
    assert path.read_bytes().startswith(MAGIC)


def test_identical_content_gives_identical_bytes(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_arrays(p1, arrays)
    save_arrays(p2, arrays)
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(ContractError):
        load_arrays(path)


def test_rejects_truncated_record(tmp_path):
    path = tmp_path / "ok.ckpt"
    save_arrays(path, {"a": np.zeros(8, dtype=np.float32)})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ContractError):
        load_arrays(path)


def test_meta_round_trip():
    obj = {"step": 17, "name": "run-a", "nested": {"lr": 1e-3}, "flag": True}
    assert unpack_meta(pack_meta(obj)) == obj


def test_meta_survives_file_round_trip(tmp_path):
    obj = {"config": {"depth": 4}, "seed": 123}
    path = tmp_path / "m.ckpt"
    save_arrays(path, {"__meta__": pack_meta(obj)})
    assert unpack_meta(load_arrays(path)["__meta__"]) == obj

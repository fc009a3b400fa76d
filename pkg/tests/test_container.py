import numpy as np
import pytest

from lmtc.container import ContainerError, load_container, save_container


def test_round_trip_preserves_arrays_and_meta(tmp_path):
    arrays = {
        "weights": np.arange(6, dtype=np.float32).reshape(2, 3),
        "indices": np.array([5, 1, 9], dtype=np.int32),
        "empty": np.zeros(0, dtype=np.float64),
    }
    meta = {"labels": ["a", "b"], "k": 2}
    path = tmp_path / "m.bin"
    save_container(path, "plt", meta, arrays)
    kind, got_meta, got = load_container(path)
    assert kind == "plt"
    assert got_meta == meta
    for name, arr in arrays.items():
        assert got[name].dtype == arr.dtype
        assert np.array_equal(got[name], arr)


def test_identical_inputs_identical_bytes(tmp_path):
    arrays = {"a": np.array([1.5, 2.5], dtype=np.float32)}
    save_container(tmp_path / "x.bin", "plt", {"v": 1}, arrays)
    save_container(tmp_path / "y.bin", "plt", {"v": 1}, arrays)
    assert (tmp_path / "x.bin").read_bytes() == (tmp_path / "y.bin").read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"definitely not a container")
    with pytest.raises(ContainerError, match="bad magic"):
        load_container(path)

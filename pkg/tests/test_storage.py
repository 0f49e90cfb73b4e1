import json
import os

import numpy as np
import pytest

from spinkernel import storage


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        base = str(tmp_path / "arr")
        data = np.random.default_rng(0).normal(size=(4, 5))
        sidecar = storage.save_array(base, data, meta={"tag": "demo"})
        assert sidecar["shape"] == [4, 5]
        loaded, sc = storage.load_array(base)
        np.testing.assert_array_equal(loaded, data)
        assert sc["meta"]["tag"] == "demo"

    def test_hash_verification(self, tmp_path):
        base = str(tmp_path / "arr")
        storage.save_array(base, np.ones(3))
        with open(base + ".bin", "r+b") as f:
            f.write(b"\x00" * 8)
        with pytest.raises(IOError, match="hash"):
            storage.load_array(base)

    def test_little_endian_layout(self, tmp_path):
        base = str(tmp_path / "arr")
        storage.save_array(base, np.array([1.0, 2.0]))
        blob = open(base + ".bin", "rb").read()
        np.testing.assert_array_equal(
            np.frombuffer(blob, dtype="<f8"), [1.0, 2.0]
        )

    def test_sidecar_meta_missing(self, tmp_path):
        assert storage.sidecar_meta(str(tmp_path / "nope")) is None

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        base = str(tmp_path / "arr")
        storage.save_array(base, np.zeros(2))
        leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
        assert leftovers == []


class TestContentHash:
    def test_bytes_and_json_stable(self):
        assert storage.content_hash(b"abc") == storage.content_hash(b"abc")
        a = storage.content_hash({"b": 1, "a": [2, 3]})
        b = storage.content_hash({"a": [2, 3], "b": 1})
        assert a == b  # key order independent

    def test_write_json(self, tmp_path):
        path = str(tmp_path / "x.json")
        storage.write_json(path, {"k": 1.5})
        assert json.load(open(path)) == {"k": 1.5}

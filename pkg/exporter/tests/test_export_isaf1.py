"""Container format: round trips, determinism, and cross-package byte parity."""

import numpy as np
import pytest

from isahoi_export.isaf1 import ExportFormatError, read_isaf1, write_isaf1


def payload():
    r = np.random.default_rng(3)
    return {
        "matrix": r.normal(size=(4, 8)).astype(np.float32),
        "row": r.normal(size=(1, 8)).astype(np.float32),
    }


class TestRoundTrip:
    def test_tensors_and_meta_survive(self, tmp_path):
        path = tmp_path / "t.isaf"
        tensors = payload()
        write_isaf1(path, "table", tensors, {"name": "demo", "prompts": ["a", "b"]})
        kind, loaded, meta = read_isaf1(path)
        assert kind == "table"
        assert meta == {"name": "demo", "prompts": ["a", "b"]}
        for name, arr in tensors.items():
            assert np.array_equal(loaded[name], arr)

    def test_write_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.isaf", tmp_path / "b.isaf"
        write_isaf1(a, "table", payload(), {"name": "x"})
        write_isaf1(b, "table", payload(), {"name": "x"})
        assert a.read_bytes() == b.read_bytes()

    def test_float64_input_is_stored_as_float32(self, tmp_path):
        path = tmp_path / "t.isaf"
        wide = {"matrix": np.array([[1.0 / 3.0]])}
        write_isaf1(path, "table", wide, {"name": "x", "prompts": ["p"]})
        _, loaded, _ = read_isaf1(path)
        assert loaded["matrix"].dtype == np.float32
        assert loaded["matrix"][0, 0] == np.float32(1.0 / 3.0)


class TestErrors:
    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(ExportFormatError, match="non-finite"):
            write_isaf1(tmp_path / "x.isaf", "table", {"m": np.array([[np.nan]])})

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "t.isaf"
        write_isaf1(path, "table", payload())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ExportFormatError, match="truncated"):
            read_isaf1(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "t.isaf"
        path.write_bytes(b"NOTISAF" * 4)
        with pytest.raises(ExportFormatError):
            read_isaf1(path)


class TestCrossPackageParity:
    """The standalone writer must match the consumer's container format."""

    def test_bytes_identical_to_the_consumer_writer(self, tmp_path):
        from isahoi.isaf import write_isaf

        tensors = payload()
        meta = {"name": "demo", "prompts": ["a", "b"]}
        ours, theirs = tmp_path / "ours.isaf", tmp_path / "theirs.isaf"
        write_isaf1(ours, "table", tensors, meta)
        write_isaf(theirs, "table", tensors, meta)
        assert ours.read_bytes() == theirs.read_bytes()

    def test_consumer_reads_our_files(self, tmp_path):
        from isahoi.isaf import read_isaf

        path = tmp_path / "t.isaf"
        tensors = payload()
        write_isaf1(path, "table", tensors, {"name": "demo", "prompts": ["a", "b"]})
        kind, loaded, meta = read_isaf(path)
        assert kind == "table" and meta["name"] == "demo"
        assert np.array_equal(loaded["matrix"], tensors["matrix"].astype(np.float64))

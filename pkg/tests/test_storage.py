"""
Unit tests for the binary artifact container.
"""

import pytest

pytestmark = [pytest.mark.unit]
import numpy as np

from duetgraph.storage import MAGIC, StorageError, dumps_json, peek_format, read_blocks, write_blocks


class TestBlocks:
    """Tests for write_blocks/read_blocks."""

    def test_header_and_blocks(self, tmp_path):
        """Test header fields and block shapes survive a write."""
        path = write_blocks(
            tmp_path / "a.dgt", "duetgraph.test/1", {"note": "x"},
            {"first": np.arange(6.0).reshape(2, 3), "second": np.ones(4)},
        )
        header, blocks = read_blocks(path, "duetgraph.test/1")
        assert header["note"] == "x"
        assert header["format"] == "duetgraph.test/1"
        assert list(blocks) == ["first", "second"]
        assert blocks["first"].dtype == np.dtype("<f4")
        np.testing.assert_array_equal(blocks["first"], np.arange(6.0).reshape(2, 3))

    def test_layout(self, tmp_path):
        """Test the file starts with the magic and a little-endian header length."""
        raw = write_blocks(tmp_path / "a.dgt", "t/1", {}, {"x": np.zeros(2)}).read_bytes()
        assert raw[:8] == MAGIC
        header_len = int.from_bytes(raw[8:16], "little")
        assert len(raw) == 16 + header_len + 8

    def test_deterministic_bytes(self, tmp_path):
        """Test identical content gives identical files."""
        a = write_blocks(tmp_path / "a.dgt", "t/1", {"b": 1, "a": 2}, {"x": np.ones(3)})
        b = write_blocks(tmp_path / "b.dgt", "t/1", {"a": 2, "b": 1}, {"x": np.ones(3)})
        assert a.read_bytes() == b.read_bytes()

    def test_wrong_format(self, tmp_path):
        """Test an unexpected format tag is rejected."""
        path = write_blocks(tmp_path / "a.dgt", "t/1", {}, {})
        with pytest.raises(StorageError):
            read_blocks(path, "t/2")

    def test_not_an_artifact(self, tmp_path):
        """Test foreign files are rejected."""
        path = tmp_path / "a.txt"
        path.write_text("hello world, not an artifact")
        with pytest.raises(StorageError):
            read_blocks(path)
        with pytest.raises(StorageError):
            peek_format(path)

    def test_truncated(self, tmp_path):
        """Test a truncated block is reported."""
        path = write_blocks(tmp_path / "a.dgt", "t/1", {}, {"x": np.ones(10)})
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(StorageError):
            read_blocks(path)

    def test_missing_file(self, tmp_path):
        """Test a missing file raises StorageError."""
        with pytest.raises(StorageError):
            read_blocks(tmp_path / "absent.dgt")

    def test_peek_format(self, tmp_path):
        """Test the format tag is read without the blocks."""
        path = write_blocks(tmp_path / "a.dgt", "duetgraph.sim/1", {}, {"x": np.ones(2)})
        assert peek_format(path) == "duetgraph.sim/1"


class TestDumpsJson:
    """Tests for dumps_json."""

    def test_sorted_keys(self):
        """Test keys are sorted."""
        assert dumps_json({"b": 1, "a": 2}).index('"a"') < dumps_json({"b": 1, "a": 2}).index('"b"')

    def test_rejects_nan(self):
        """Test NaN cannot be written."""
        with pytest.raises(ValueError):
            dumps_json({"x": float("nan")})

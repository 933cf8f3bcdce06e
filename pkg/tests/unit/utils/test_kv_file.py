"""
Unit tests for the key = value file and CSV output utilities.
"""

import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from reactive_avatar.core.errors import ArtifactIOError
from reactive_avatar.utils.csv_out import format_value, read_csv, read_provenance, write_csv
from reactive_avatar.utils.kv_file import dump_kv, get_env_flag, load_kv_file, parse_kv_text


def test_parse_kv_text():
    """Test parsing with comments, blank lines and quoted values."""
    values = parse_kv_text('# header\n\na = 1\nb = "two words"  # note\nc=3\n')
    assert values == {"a": "1", "b": "two words", "c": "3"}


def test_parse_kv_text_errors():
    """Test that malformed lines and duplicate keys raise ValueError."""
    with pytest.raises(ValueError):
        parse_kv_text("a 1\n")
    with pytest.raises(ValueError):
        parse_kv_text("a = 1\na = 2\n")
    with pytest.raises(ValueError):
        parse_kv_text(" = 1\n")


def test_dump_and_load_kv_file():
    """Test that dumped values load back in order."""
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "values.cfg"
        path.write_text(dump_kv({"z": 1, "a": "x"}))
        assert list(load_kv_file(path).items()) == [("z", "1"), ("a", "x")]


def test_load_kv_file_missing():
    """Test that a missing file raises FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        load_kv_file("/nonexistent/values.cfg")


def test_get_env_flag():
    """Test reading boolean flags from the environment."""
    with patch.dict(os.environ, {"RA_TEST_FLAG": "Yes"}):
        assert get_env_flag("RA_TEST_FLAG")
    with patch.dict(os.environ, {"RA_TEST_FLAG": "0"}):
        assert not get_env_flag("RA_TEST_FLAG", default=True)
    with patch.dict(os.environ, {}, clear=True):
        assert get_env_flag("RA_TEST_FLAG", default=True)


def test_format_value():
    """Test that values render stably."""
    assert format_value(True) == "true"
    assert format_value(float("nan")) == "nan"
    assert format_value(0.1) == "0.1"
    assert format_value(3) == "3"


def test_write_and_read_csv():
    """Test that provenance lines precede the header and rows read back."""
    with tempfile.TemporaryDirectory() as temp_dir:
        path = Path(temp_dir) / "out" / "trace.csv"
        write_csv(path, ("step", "loss"), [{"step": 0, "loss": 0.5}, {"step": 1, "loss": 0.25}], {"digest": "abc"})
        assert path.read_text().splitlines()[:2] == ["# digest = abc", "step,loss"]
        assert read_provenance(path) == {"digest": "abc"}
        rows = read_csv(path)
    assert rows == [{"step": "0", "loss": "0.5"}, {"step": "1", "loss": "0.25"}]


def test_read_csv_missing():
    """Test that reading a missing CSV raises ArtifactIOError."""
    with pytest.raises(ArtifactIOError):
        read_csv("/nonexistent/trace.csv")

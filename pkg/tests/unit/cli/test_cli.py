"""
Unit tests for the command-line interface.
"""

import tempfile
from pathlib import Path

from click.testing import CliRunner

from reactive_avatar.cli import main
from reactive_avatar.core.config import ConfigManager
from reactive_avatar.utils.csv_out import read_csv


class TestCli:
    """Tests invoking subcommands against a temporary output directory."""

    def setup_method(self):
        self.runner = CliRunner()
        self.temp_dir = tempfile.TemporaryDirectory()
        self.root = Path(self.temp_dir.name)

    def teardown_method(self):
        self.temp_dir.cleanup()

    def write_config(self, config) -> str:
        path = self.root / "tiny.cfg"
        ConfigManager.save_config(config, path)
        return str(path)

    def test_gen_data_is_deterministic(self, tiny_run_config):
        """Test that gen-data with one seed writes identical datasets and echoes the digest."""
        config_path = self.write_config(tiny_run_config)
        outputs = []
        for name in ("a", "b"):
            out = self.root / name
            result = self.runner.invoke(main, ["--config", config_path, "--out", str(out), "gen-data"])
            assert result.exit_code == 0, result.output
            assert f"digest={ConfigManager.digest(tiny_run_config)}" in result.output
            assert (out / "run.cfg").exists()
            outputs.append((out / "dataset.afds").read_bytes())
        assert outputs[0] == outputs[1]

    def test_seed_override(self, tiny_run_config):
        """Test that --seed changes the run digest."""
        config_path = self.write_config(tiny_run_config)
        result = self.runner.invoke(
            main, ["--config", config_path, "--seed", "7", "--out", str(self.root / "s"), "gen-data"]
        )
        assert result.exit_code == 0, result.output
        expected = ConfigManager.digest(ConfigManager.with_seed(tiny_run_config, 7))
        assert f"digest={expected}" in result.output

    def test_bad_config_exits_with_code_two(self):
        """Test that an invalid configuration exits with the config error code."""
        path = self.root / "bad.cfg"
        path.write_text("model.width = 15\n")
        result = self.runner.invoke(main, ["--config", str(path), "--out", str(self.root / "x"), "gen-data"])
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_missing_artifact_exits_with_code_five(self, tiny_run_config):
        """Test that training without a dataset exits with the IO error code."""
        config_path = self.write_config(tiny_run_config)
        result = self.runner.invoke(
            main, ["--config", config_path, "--out", str(self.root / "empty"), "train", "--variant", "codec"]
        )
        assert result.exit_code == 5

    def test_grad_check(self):
        """Test a single gradient check and its CSV output."""
        out = self.root / "gc"
        result = self.runner.invoke(main, ["--out", str(out), "grad-check", "--check", "masked_attention"])
        assert result.exit_code == 0, result.output
        assert "masked_attention" in result.output
        assert "pass" in result.output
        rows = read_csv(out / "gradcheck.csv")
        assert [row["check"] for row in rows] == ["masked_attention"]
        assert rows[0]["passed"] == "true"

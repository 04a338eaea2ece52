"""
Integration tests for CLI execution as subprocess.

These tests execute the CLI as a real subprocess to test end-to-end functionality.
"""

import pytest

pytestmark = [pytest.mark.integration, pytest.mark.cli, pytest.mark.slow]
import json
import os
import subprocess


class TestCLISubprocess:
    """Tests for CLI execution as subprocess."""

    def test_help(self, cli_command, project_root):
        """Test python -m duetgraph --help lists the subcommands."""
        result = subprocess.run(
            cli_command + ["--help"], cwd=project_root, capture_output=True, text=True, timeout=60,
        )
        assert result.returncode == 0
        for name in ("simulate", "preprocess", "train", "eval", "render", "rerun", "schema"):
            assert name in result.stdout

    def test_schema(self, cli_command, project_root):
        """Test the schema subcommand prints valid JSON."""
        result = subprocess.run(
            cli_command + ["schema"], cwd=project_root, capture_output=True, text=True, timeout=60,
        )
        assert result.returncode == 0
        assert "model" in json.loads(result.stdout)

    def test_config_error_record(self, cli_command, project_root, tmp_path):
        """Test a config error exits 2 with a JSON record on stderr."""
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"sim": {"frames": 10}}))
        result = subprocess.run(
            cli_command + ["simulate", "--config", str(config), "--out", str(tmp_path / "out")],
            cwd=project_root, capture_output=True, text=True, timeout=60,
        )
        assert result.returncode == 2
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert record == {
            "error": "ConfigError",
            "field": "sim.num_trajectories",
            "message": "sim.num_trajectories: required field is missing",
        }

    def test_log_level_from_environment(self, cli_command, project_root, tmp_path):
        """Test DUETGRAPH_LOG_LEVEL=DEBUG enables debug output."""
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"sim": {"num_trajectories": 2, "frames": 3, "substeps_per_frame": 2}}))
        env = os.environ.copy()
        env["DUETGRAPH_LOG_LEVEL"] = "DEBUG"
        result = subprocess.run(
            cli_command + ["simulate", "--config", str(config), "--out", str(tmp_path / "out")],
            cwd=project_root, capture_output=True, text=True, timeout=120, env=env,
        )
        assert result.returncode == 0
        assert "DEBUG" in result.stderr
        assert (tmp_path / "out" / "dataset.dgt").exists()

    def test_missing_required_flag(self, cli_command, project_root):
        """Test argparse rejects a subcommand without --out."""
        result = subprocess.run(
            cli_command + ["simulate"], cwd=project_root, capture_output=True, text=True, timeout=60,
        )
        assert result.returncode == 2
        assert "--out" in result.stderr

"""
Unit tests for the CLI main function.
"""

import pytest

pytestmark = [pytest.mark.integration, pytest.mark.cli]
import json
from dataclasses import replace

import numpy as np

from duetgraph import cli, sim
from duetgraph.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_NUMERIC, EXIT_OK, MANIFEST_NAME, main
from duetgraph.models import Detection, RawFrame, RawFrameStream
from duetgraph.pose import load_training_tensor, write_keypoints_jsonl
from duetgraph.skeleton import REST_POSE
from duetgraph.storage import read_blocks
from duetgraph.synthetic import synthetic_duet


SIM_SECTION = {"num_trajectories": 4, "num_particles": 3, "frames": 13, "substeps_per_frame": 10, "seed": 5}


def write_config(path, **sections):
    path.write_text(json.dumps(sections), encoding="utf-8")
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def error_record(err):
    """The machine-readable error is the last stderr line."""
    return json.loads(err.strip().splitlines()[-1])


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSchemaAndVersion:
    """Tests for the schema subcommand and --version."""

    def test_schema(self, capsys):
        """Test the schema is printed as JSON."""
        code, out, _ = run(capsys, "schema")
        assert code == EXIT_OK
        assert json.loads(out)["sim"]["frames"]["required"] is True

    def test_version(self, capsys):
        """Test --version exits cleanly."""
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert "duetgraph" in capsys.readouterr().out


class TestSimulateCommand:
    """Tests for the simulate subcommand."""

    def test_forty_nine_frames_of_five_particles(self, capsys, tmp_path):
        """Test frames=49 with 5 particles gives [49, 5, 4] trajectories."""
        config = write_config(
            tmp_path / "config.json",
            sim={"num_trajectories": 2, "num_particles": 5, "frames": 49, "substeps_per_frame": 5},
        )
        code, _, _ = run(capsys, "simulate", "--config", config, "--out", tmp_path / "sim")
        assert code == EXIT_OK
        header, blocks = read_blocks(tmp_path / "sim" / "dataset.dgt")
        assert header["shapes"]["trajectory"] == [49, 5, 4]
        assert blocks["trajectories"].shape == (2, 49, 5, 4)

    def test_manifest(self, capsys, tmp_path):
        """Test the manifest echoes the resolved config, seed override and outputs."""
        config = write_config(tmp_path / "config.json", sim=SIM_SECTION)
        run(capsys, "simulate", "--config", config, "--seed", 11, "--out", tmp_path / "sim")
        manifest = json.loads((tmp_path / "sim" / MANIFEST_NAME).read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["seed"] == 11
        assert manifest["resolved_config"]["sim"]["seed"] == 11
        assert manifest["resolved_config"]["sim"]["dt"] == 0.001
        assert manifest["outputs"] == ["dataset.dgt"]
        assert manifest["config_path"] == str((tmp_path / "config.json").resolve())

    def test_missing_field(self, capsys, tmp_path):
        """Test a missing required field exits 2 and names the field."""
        config = write_config(tmp_path / "config.json", sim={"num_trajectories": 2})
        code, _, err = run(capsys, "simulate", "--config", config, "--out", tmp_path / "sim")
        assert code == EXIT_CONFIG
        record = error_record(err)
        assert record["error"] == "ConfigError"
        assert record["field"] == "sim.frames"

    def test_missing_config_file(self, capsys, tmp_path):
        """Test an unreadable config exits 1 with an IoError record."""
        code, _, err = run(capsys, "simulate", "--config", tmp_path / "absent.json", "--out", tmp_path / "sim")
        assert code == EXIT_IO
        assert error_record(err)["error"] == "IoError"

    def test_non_finite_state(self, capsys, tmp_path, monkeypatch):
        """Test a blown-up integration exits 3."""
        def exploding(positions, velocities, signs, dt, eps, box):
            return positions * np.inf, velocities

        monkeypatch.setattr(sim, "_leapfrog", exploding)
        config = write_config(tmp_path / "config.json", sim=SIM_SECTION)
        code, _, err = run(capsys, "simulate", "--config", config, "--out", tmp_path / "sim")
        assert code == EXIT_NUMERIC
        assert error_record(err)["error"] == "NonFiniteState"


class TestPreprocessCommand:
    """Tests for the preprocess subcommand."""

    def test_keypoints(self, capsys, tmp_path):
        """Test keypoint input writes cleaned poses and both splits."""
        source = write_keypoints_jsonl(tmp_path / "duet.jsonl", synthetic_duet(frames=80, seed=1))
        code, _, _ = run(
            capsys, "preprocess", "--in", source, "--seq-len", 4, "--joints-per-dancer", 3,
            "--out", tmp_path / "pre",
        )
        assert code == EXIT_OK
        train_data = load_training_tensor(tmp_path / "pre" / "train.dgt")
        assert train_data.sequences.shape[1:] == (5, 6, 6)
        assert train_data.num_edges == 18
        manifest = json.loads((tmp_path / "pre" / MANIFEST_NAME).read_text())
        assert manifest["outputs"] == ["poses.dgt", "train.dgt", "val.dgt"]

    def test_keypoints_need_joint_count(self, capsys, tmp_path):
        """Test keypoint input without joints_per_dancer is a config error."""
        source = write_keypoints_jsonl(tmp_path / "duet.jsonl", synthetic_duet(frames=30, seed=1))
        code, _, err = run(capsys, "preprocess", "--in", source, "--seq-len", 4, "--out", tmp_path / "pre")
        assert code == EXIT_CONFIG
        assert error_record(err)["field"] == "preprocess.joints_per_dancer"

    def test_missing_seq_len(self, capsys, tmp_path):
        """Test seq_len is required."""
        source = write_keypoints_jsonl(tmp_path / "duet.jsonl", synthetic_duet(frames=30, seed=1))
        code, _, err = run(capsys, "preprocess", "--in", source, "--out", tmp_path / "pre")
        assert code == EXIT_CONFIG
        assert error_record(err)["field"] == "preprocess.seq_len"

    def test_missing_input(self, capsys, tmp_path):
        """Test a missing input file exits 1."""
        code, _, err = run(
            capsys, "preprocess", "--in", tmp_path / "absent.jsonl", "--seq-len", 4,
            "--joints-per-dancer", 3, "--out", tmp_path / "pre",
        )
        assert code == EXIT_IO
        assert error_record(err)["error"] == "IoError"

    def test_unusable_keypoints(self, capsys, tmp_path):
        """Test a stream that never shows two dancers exits 4."""
        stream = RawFrameStream(frames=[
            RawFrame(index=i, detections=[Detection(REST_POSE.copy(), 0.9)]) for i in range(10)
        ])
        source = write_keypoints_jsonl(tmp_path / "solo.jsonl", stream)
        code, _, _ = run(
            capsys, "preprocess", "--in", source, "--seq-len", 4, "--joints-per-dancer", 3,
            "--out", tmp_path / "pre",
        )
        assert code == EXIT_DATA


class TestPipeline:
    """Tests chaining every subcommand and replaying each from its manifest."""

    @pytest.fixture
    def pipeline(self, capsys, tmp_path):
        config = write_config(
            tmp_path / "config.json",
            sim=SIM_SECTION,
            preprocess={"seq_len": 3, "split": 0.5},
            model={"n_edge_types": 2, "hidden_dim": 8, "dropout_p": 0.0},
            train={"epochs": 2, "batch_size": 4},
            eval={"threshold": 0.5},
            render={"windows": [0, 1]},
        )
        runs = tmp_path / "runs"
        steps = [
            ("simulate", []),
            ("preprocess", ["--input", runs / "simulate" / "dataset.dgt"]),
            ("train", ["--train", runs / "preprocess" / "train.dgt", "--val", runs / "preprocess" / "val.dgt"]),
            ("eval", ["--checkpoint", runs / "train" / "best.ckpt", "--data", runs / "preprocess" / "val.dgt"]),
            ("render", ["--report", runs / "eval" / "report.json", "--data", runs / "preprocess" / "val.dgt"]),
        ]
        for name, flags in steps:
            code, _, err = run(capsys, name, "--config", config, *flags, "--out", runs / name)
            assert code == EXIT_OK, err
        return runs

    def test_artifacts(self, pipeline):
        """Test each step leaves its artifacts and a manifest."""
        assert (pipeline / "train" / "training_log.csv").exists()
        report = json.loads((pipeline / "eval" / "report.json").read_text())
        assert len(report["edge_confidences"]) == 6
        assert report["edge_accuracy"] is not None
        assert (pipeline / "render" / "window_0001.svg").exists()
        for name in ("simulate", "preprocess", "train", "eval", "render"):
            assert (pipeline / name / MANIFEST_NAME).exists()

    def test_model_shape_comes_from_data(self, pipeline):
        """Test train fills seq_len and feature_dim from the windows."""
        manifest = json.loads((pipeline / "train" / MANIFEST_NAME).read_text())
        model = manifest["resolved_config"]["model"]
        assert (model["seq_len"], model["feature_dim"]) == (3, 4)
        assert model["prior"] == [0.9, 0.1]

    @pytest.mark.parametrize("name", ["simulate", "preprocess", "train", "eval", "render"])
    def test_rerun_is_byte_identical(self, pipeline, capsys, tmp_path, name):
        """Test replaying a manifest reproduces every output byte for byte."""
        replay = tmp_path / "replay" / name
        code, _, err = run(capsys, "rerun", "--manifest", pipeline / name / MANIFEST_NAME, "--out", replay)
        assert code == EXIT_OK, err
        assert tree_bytes(replay) == tree_bytes(pipeline / name)

    def test_bad_window(self, pipeline, capsys, tmp_path):
        """Test rendering a window that does not exist exits 4."""
        code, _, err = run(
            capsys, "render", "--report", pipeline / "eval" / "report.json",
            "--data", pipeline / "preprocess" / "val.dgt", "--windows", 999, "--out", tmp_path / "bad",
        )
        assert code == EXIT_DATA
        assert error_record(err)["error"] == "IndexError"

    def test_missing_checkpoint(self, pipeline, capsys, tmp_path):
        """Test a missing checkpoint exits 1."""
        code, _, _ = run(
            capsys, "eval", "--checkpoint", tmp_path / "absent.ckpt",
            "--data", pipeline / "preprocess" / "val.dgt", "--out", tmp_path / "bad",
        )
        assert code == EXIT_IO

    @pytest.mark.parametrize("body", ["{}", "[1, 2]", '{"recon_mse": 0.1}'])
    def test_malformed_report(self, pipeline, capsys, tmp_path, body):
        """Test a report that parses as JSON but is not a report exits 1 with an error record."""
        report = tmp_path / "report.json"
        report.write_text(body, encoding="utf-8")
        code, _, err = run(
            capsys, "render", "--report", report,
            "--data", pipeline / "preprocess" / "val.dgt", "--out", tmp_path / "bad",
        )
        assert code == EXIT_IO
        assert error_record(err)["error"] == "IoError"

    def test_manifest_without_inputs(self, pipeline, capsys, tmp_path):
        """Test a manifest missing its inputs exits 1 with an error record."""
        manifest = json.loads((pipeline / "eval" / MANIFEST_NAME).read_text())
        del manifest["inputs"]
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(manifest), encoding="utf-8")
        code, _, err = run(capsys, "rerun", "--manifest", path, "--out", tmp_path / "bad")
        assert code == EXIT_IO
        assert error_record(err)["error"] == "IoError"

    def test_non_finite_metric(self, pipeline, capsys, tmp_path, monkeypatch):
        """Test a NaN metric is reported instead of written into report.json."""
        original = cli.evaluate
        monkeypatch.setattr(cli, "evaluate", lambda *a, **k: replace(original(*a, **k), recon_mse=float("nan")))
        code, _, err = run(
            capsys, "eval", "--checkpoint", pipeline / "train" / "best.ckpt",
            "--data", pipeline / "preprocess" / "val.dgt", "--out", tmp_path / "nan",
        )
        assert code == EXIT_IO
        assert "report.json" in error_record(err)["message"]
        assert not (tmp_path / "nan" / "report.json").exists()

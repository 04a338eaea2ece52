"""
Command-line interface.

Every subcommand writes its artifacts plus ``manifest.json`` into ``--out``.
The manifest holds the fully resolved configuration and the input paths, so
``duetgraph rerun --manifest <file> --out <dir>`` reproduces the run.

Exit codes:
    0: Success
    1: I/O or artifact format error
    2: Configuration error
    3: Numerical failure (non-finite simulation state or loss)
    4: Data error (unusable keypoints, shape mismatch, bad indices)
"""

import argparse
import json
import os
import sys
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger

from . import __version__
from .config import CONFIG_SCHEMA, ConfigError, build_section, load_config, resolved_dict
from .model import ModelError, load_checkpoint, save_checkpoint
from .models import EvalReport, RunManifest
from .pose import (
    PoseError,
    build_particle_tensor,
    build_training_tensor,
    clean_stream,
    load_pose_sequence,
    load_training_tensor,
    read_keypoints_jsonl,
    save_pose_sequence,
    save_training_tensor,
)
from .render import render
from .sim import SIM_FORMAT, NonFiniteState, SimulationError, load_dataset, save_dataset, simulate_dataset
from .storage import StorageError, dumps_json, peek_format
from .train import NonFiniteLoss, TrainingError, evaluate, train


EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA = 4

MANIFEST_NAME = "manifest.json"
LOG_LEVEL_ENV = "DUETGRAPH_LOG_LEVEL"


def configure_logging():
    """Send loguru output to stderr at the level named by DUETGRAPH_LOG_LEVEL."""
    load_dotenv()
    level = os.getenv(LOG_LEVEL_ENV, "INFO").strip().upper() or "INFO"
    logger.remove()
    try:
        logger.add(sys.stderr, level=level)
    except ValueError:
        logger.add(sys.stderr, level="INFO")
        logger.warning("Unknown log level {!r} in {}; using INFO", level, LOG_LEVEL_ENV)


def _section(raw: dict, name: str, overrides: dict = None):
    return build_section(name, raw.get(name), overrides)


def _write_json(path: Path, data) -> Path:
    try:
        text = dumps_json(data)
    except ValueError as e:
        raise StorageError(f"Cannot write {path}: {e}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _read_json(path, what: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise StorageError(f"Invalid {what} {path}: {e}")
    if not isinstance(data, dict):
        raise StorageError(f"Invalid {what} {path}: expected a JSON object")
    return data


def _relative(out: Path, paths) -> list:
    return sorted(str(Path(p).relative_to(out)) for p in paths)


def run_simulate(raw: dict, inputs: dict, out: Path):
    config = _section(raw, "sim")
    dataset = simulate_dataset(config)
    written = [save_dataset(out / "dataset.dgt", dataset, config)]
    print(f"Simulated {len(dataset)} trajectories -> {written[0]}")
    return {"sim": resolved_dict(config)}, config.seed, written


def run_preprocess(raw: dict, inputs: dict, out: Path):
    config = _section(raw, "preprocess")
    source = inputs["input"]
    try:
        is_sim = peek_format(source) == SIM_FORMAT
    except StorageError:
        is_sim = False

    written = []
    if is_sim:
        dataset, _ = load_dataset(source)
        train_data, val_data = build_particle_tensor(
            dataset, config.seq_len, split=config.split, seed=config.seed, center=config.center,
        )
    else:
        if config.joints_per_dancer is None:
            raise ConfigError("preprocess.joints_per_dancer", "required for keypoint input")
        stream = read_keypoints_jsonl(source)
        if config.fps is not None:
            stream.fps = config.fps
        poses = clean_stream(stream, keep_ratio=config.keep_ratio)
        written.append(save_pose_sequence(out / "poses.dgt", poses))
        train_data, val_data = build_training_tensor(
            [poses], config.seq_len, config.joints_per_dancer,
            split=config.split, seed=config.seed, center=config.center,
        )
    written.append(save_training_tensor(out / "train.dgt", train_data))
    written.append(save_training_tensor(out / "val.dgt", val_data))
    print(
        f"{train_data.num_windows} training / {val_data.num_windows} validation windows, "
        f"{train_data.num_nodes} nodes, {train_data.num_edges} candidate edges"
    )
    return {"preprocess": resolved_dict(config)}, config.seed, written


def run_train(raw: dict, inputs: dict, out: Path):
    train_data = load_training_tensor(inputs["train"])
    val_data = load_training_tensor(inputs["val"])
    model_raw = dict(raw.get("model") or {})
    model_raw.setdefault("seq_len", train_data.seq_len)
    model_raw.setdefault("feature_dim", train_data.feature_dim)
    model_config = build_section("model", model_raw)
    train_config = _section(raw, "train")

    checkpoint_dir = out / "checkpoints" if train_config.checkpoint_every else None
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "training_log.csv"
    result = train(
        model_config, train_config, train_data, val_data,
        log_path=log_path, checkpoint_dir=checkpoint_dir,
    )
    written = [log_path, save_checkpoint(out / "best.ckpt", result.model, extra={"best_epoch": result.best_epoch})]
    if checkpoint_dir is not None:
        written.extend(sorted(checkpoint_dir.glob("*.ckpt")))
    print(
        f"Validation MSE {result.initial_val_mse:.6f} -> {result.best_val_mse:.6f} "
        f"(best epoch {result.best_epoch})"
    )
    resolved = {"model": resolved_dict(model_config), "train": resolved_dict(train_config)}
    return resolved, train_config.seed, written


def run_eval(raw: dict, inputs: dict, out: Path):
    config = _section(raw, "eval")
    model, _ = load_checkpoint(inputs["checkpoint"])
    data = load_training_tensor(inputs["data"])
    report = evaluate(model, data, config)
    written = [_write_json(out / "report.json", report.to_dict())]
    print(report)
    return {"eval": resolved_dict(config)}, config.seed, written


def run_render(raw: dict, inputs: dict, out: Path):
    config = _section(raw, "render")
    report_data = _read_json(inputs["report"], "report")
    try:
        report = EvalReport.from_dict(report_data)
    except (KeyError, TypeError, ValueError) as e:
        raise StorageError(f"Invalid report {inputs['report']}: {e!r}")
    data = load_training_tensor(inputs["data"])
    poses = load_pose_sequence(inputs["poses"]) if inputs.get("poses") else None
    written = render(report, data, out, config, poses=poses)
    print(f"Wrote {len(written)} files to {out}")
    return {"render": resolved_dict(config)}, None, written


RUNNERS = {
    "simulate": run_simulate,
    "preprocess": run_preprocess,
    "train": run_train,
    "eval": run_eval,
    "render": run_render,
}

# Flag name -> (section, field) for subcommands that accept it.
FLAG_OVERRIDES = {
    "simulate": {"seed": ("sim", "seed")},
    "preprocess": {
        "seed": ("preprocess", "seed"),
        "seq_len": ("preprocess", "seq_len"),
        "joints_per_dancer": ("preprocess", "joints_per_dancer"),
        "keep_ratio": ("preprocess", "keep_ratio"),
    },
    "train": {"seed": ("train", "seed")},
    "eval": {"seed": ("eval", "seed"), "threshold": ("eval", "threshold")},
    "render": {"windows": ("render", "windows"), "symmetrize": ("render", "symmetrize")},
}

INPUT_FLAGS = {
    "simulate": (),
    "preprocess": ("input",),
    "train": ("train", "val"),
    "eval": ("checkpoint", "data"),
    "render": ("report", "data", "poses"),
}


def execute(subcommand: str, raw: dict, inputs: dict, out: Path, config_path: str = None) -> RunManifest:
    """
    Run one pipeline step and write its manifest.

    Args:
        subcommand: Key of RUNNERS
        raw: Config sections with flag overrides already applied
        inputs: Input paths by role
        out: Output directory
        config_path: Config file the run started from, echoed into the manifest

    Returns:
        RunManifest: The written manifest
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    resolved, seed, written = RUNNERS[subcommand](raw, inputs, out)
    manifest = RunManifest(
        subcommand=subcommand,
        config_path=config_path,
        inputs=inputs,
        outputs=_relative(out, written),
        seed=seed,
        resolved_config=resolved,
        version=__version__,
    )
    _write_json(out / MANIFEST_NAME, manifest.to_dict())
    logger.debug("Wrote manifest for {} to {}", subcommand, out)
    return manifest


def _apply_overrides(subcommand: str, raw: dict, args) -> dict:
    raw = {name: dict(body) for name, body in raw.items()}
    for flag, (section, field) in FLAG_OVERRIDES[subcommand].items():
        value = getattr(args, flag, None)
        if value is not None:
            raw.setdefault(section, {})[field] = list(value) if isinstance(value, list) else value
    return raw


def _inputs(subcommand: str, args) -> dict:
    inputs = {}
    for flag in INPUT_FLAGS[subcommand]:
        value = getattr(args, flag, None)
        if value is not None:
            inputs[flag] = str(Path(value).resolve())
    return inputs


def rerun(manifest_path, out) -> RunManifest:
    """Replay the run recorded in a manifest into ``out``."""
    data = _read_json(manifest_path, "manifest")
    subcommand = data.get("subcommand")
    if subcommand not in RUNNERS:
        raise ConfigError("subcommand", f"cannot rerun {subcommand!r}")
    resolved, inputs = data.get("resolved_config"), data.get("inputs")
    if not isinstance(resolved, dict) or not isinstance(inputs, dict):
        raise StorageError(f"Invalid manifest {manifest_path}: missing resolved_config or inputs")
    return execute(subcommand, resolved, inputs, out, config_path=data.get("config_path"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duetgraph",
        description="Infer interaction graphs between dancers (or simulated particles).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", required=True, help="Output directory")
        return p

    p = command("simulate", "Generate charged-particle trajectories")
    p.add_argument("--seed", type=int)

    p = command("preprocess", "Clean keypoints (or a simulation) into training windows")
    p.add_argument("--input", "--in", dest="input", required=True, help="Keypoint JSONL file or simulation artifact")
    p.add_argument("--seed", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--joints-per-dancer", dest="joints_per_dancer", type=int)
    p.add_argument("--keep-ratio", dest="keep_ratio", type=float)

    p = command("train", "Train a model")
    p.add_argument("--train", required=True, help="Training tensor")
    p.add_argument("--val", required=True, help="Validation tensor")
    p.add_argument("--seed", type=int)

    p = command("eval", "Evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="Tensor to evaluate")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)

    p = command("render", "Draw selected edges as SVG and CSV")
    p.add_argument("--report", required=True, help="report.json from eval")
    p.add_argument("--data", required=True, help="Tensor the report was computed on")
    p.add_argument("--poses", help="Cleaned poses (poses.dgt) to draw full skeletons")
    p.add_argument("--windows", type=int, nargs="+")
    p.add_argument("--symmetrize", action="store_true", default=None)

    p = sub.add_parser("rerun", help="Replay a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    sub.add_parser("schema", help="Print the config schema")
    return parser


def _exit_code(error: Exception) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (NonFiniteState, NonFiniteLoss)):
        return EXIT_NUMERIC
    if isinstance(error, (PoseError, ModelError, TrainingError, SimulationError, IndexError)):
        return EXIT_DATA
    return EXIT_IO


def _report_error(error: Exception, code: int):
    name = "IoError" if code == EXIT_IO else type(error).__name__
    record = {"error": name, "message": str(error), "field": getattr(error, "field", None)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    """
    CLI entry point.

    Returns:
        int: Exit code (see module docstring)
    """
    args = build_parser().parse_args(argv)
    configure_logging()

    if args.command == "schema":
        print(dumps_json(CONFIG_SCHEMA))
        return EXIT_OK

    try:
        if args.command == "rerun":
            rerun(args.manifest, args.out)
        else:
            raw = load_config(args.config) if args.config else {}
            raw = _apply_overrides(args.command, raw, args)
            config_path = str(Path(args.config).resolve()) if args.config else None
            execute(args.command, raw, _inputs(args.command, args), args.out, config_path=config_path)
        return EXIT_OK
    except (ConfigError, NonFiniteState, NonFiniteLoss, PoseError, ModelError,
            TrainingError, SimulationError, IndexError, StorageError, OSError) as e:
        code = _exit_code(e)
        logger.debug("{} failed: {!r}", args.command, e)
        _report_error(e, code)
        return code

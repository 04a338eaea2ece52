"""
JSON configuration: published schema, loading and validation.

A config file is one JSON object with optional sections ``sim``, ``preprocess``,
``model``, ``train``, ``eval`` and ``render``. Each section maps onto a dataclass
in ``duetgraph.models``.
"""

import json
import math
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional

from .models import (
    EvalConfig,
    ModelConfig,
    PreprocessConfig,
    RenderConfig,
    SimConfig,
    TrainConfig,
)


class ConfigError(Exception):
    """Exception raised for schema violations; ``field`` names the offending entry."""

    def __init__(self, field: Optional[str], message: str):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


SECTIONS = {
    "sim": SimConfig,
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "render": RenderConfig,
}

FIELD_TYPES = {
    "sim": {
        "num_trajectories": "int",
        "num_particles": "int",
        "frames": "int",
        "substeps_per_frame": "int",
        "dt": "float",
        "force_softening": "float",
        "box_halfwidth": "float?",
        "velocity_scale": "float",
        "seed": "int",
        "workers": "int",
    },
    "preprocess": {
        "seq_len": "int?",
        "joints_per_dancer": "int?",
        "split": "float",
        "seed": "int",
        "keep_ratio": "float",
        "fps": "float?",
        "center": "bool",
    },
    "model": {
        "n_edge_types": "int",
        "hidden_dim": "int",
        "dropout_p": "float",
        "use_batchnorm": "bool",
        "prior": "float[]?",
        "temperature": "float",
        "seq_len": "int",
        "feature_dim": "int",
        "encoder": "str",
        "hard_sample": "bool",
        "residual_output": "bool",
    },
    "train": {
        "epochs": "int",
        "batch_size": "int",
        "learning_rate": "float",
        "lr_decay_every": "int",
        "lr_decay": "float",
        "beta": "float",
        "beta_schedule": "str",
        "warmup_fraction": "float",
        "augment_factor": "int",
        "seed": "int",
        "checkpoint_every": "int",
    },
    "eval": {
        "threshold": "float",
        "seed": "int",
        "batch_size": "int",
    },
    "render": {
        "windows": "int[]",
        "symmetrize": "bool",
    },
}

REQUIRED_FIELDS = {
    "sim": ("num_trajectories", "frames"),
    "preprocess": ("seq_len",),
    "model": ("n_edge_types",),
    "train": ("epochs",),
    "eval": (),
    "render": (),
}

CHOICES = {
    ("model", "encoder"): ("full", "compact"),
    ("train", "beta_schedule"): ("constant", "warmup"),
}


def schema() -> dict:
    """The published config schema: type, default and required flag per field."""
    published = {}
    for section, cls in SECTIONS.items():
        defaults = {f.name: f.default for f in fields(cls)}
        published[section] = {
            name: {
                "type": kind,
                "default": list(defaults[name]) if isinstance(defaults[name], tuple) else defaults[name],
                "required": name in REQUIRED_FIELDS[section],
                **(
                    {"choices": list(CHOICES[(section, name)])}
                    if (section, name) in CHOICES
                    else {}
                ),
            }
            for name, kind in FIELD_TYPES[section].items()
        }
    return published


def load_config(path) -> dict:
    """
    Read a config file and check its top-level layout.

    Args:
        path: JSON file

    Returns:
        dict: Raw sections, keyed by section name

    Raises:
        ConfigError: If the file is not a JSON object of known sections
        OSError: If the file cannot be read
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(None, f"Invalid JSON in {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(None, "Config must be a JSON object")
    for section, body in data.items():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(section, "section must be a JSON object")
    return data


def build_section(name: str, data: Optional[dict], overrides: Optional[dict] = None):
    """
    Build and validate one config section.

    Args:
        name: Section name
        data: Raw section values (may be None)
        overrides: Values taking precedence over ``data``; None entries are ignored

    Returns:
        The section dataclass

    Raises:
        ConfigError: On unknown or missing fields, wrong types or invariant violations
    """
    cls = SECTIONS[name]
    values = dict(data or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    types = FIELD_TYPES[name]
    for key in values:
        if key not in types:
            raise ConfigError(f"{name}.{key}", "unknown field")
    for key in REQUIRED_FIELDS[name]:
        if values.get(key) is None:
            raise ConfigError(f"{name}.{key}", "required field is missing")

    kwargs = {key: _coerce(f"{name}.{key}", types[key], value) for key, value in values.items()}
    config = cls(**kwargs)
    validate(name, config)
    return config


def resolved_dict(config) -> dict:
    """JSON-ready view of a section dataclass."""
    if isinstance(config, ModelConfig):
        return config.to_dict()
    data = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}


def _coerce(field: str, kind: str, value):
    nullable = kind.endswith("?")
    base = kind.rstrip("?")
    if value is None:
        if nullable:
            return None
        raise ConfigError(field, "must not be null")

    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(field, f"expected an integer, got {value!r}")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(field, "must be finite")
        return float(value)
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(field, f"expected true or false, got {value!r}")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(field, f"expected a string, got {value!r}")
        return value
    if base in ("int[]", "float[]"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(field, f"expected a list, got {value!r}")
        item_kind = base[:-2]
        return tuple(_coerce(field, item_kind, v) for v in value)
    raise ConfigError(field, f"unsupported type {kind}")


def _require(condition: bool, field: str, message: str):
    if not condition:
        raise ConfigError(field, message)


def validate(name: str, c):
    """Check the invariants of a section dataclass; raises ConfigError."""
    for (section, key), allowed in CHOICES.items():
        if section == name:
            _require(getattr(c, key) in allowed, f"{name}.{key}", f"must be one of {list(allowed)}")

    if name == "sim":
        _require(c.num_trajectories >= 1, "sim.num_trajectories", "must be >= 1")
        _require(c.num_particles >= 1, "sim.num_particles", "must be >= 1")
        _require(c.frames >= 2, "sim.frames", "must be >= 2")
        _require(c.substeps_per_frame >= 1, "sim.substeps_per_frame", "must be >= 1")
        _require(c.dt > 0, "sim.dt", "must be > 0")
        _require(c.force_softening > 0, "sim.force_softening", "must be > 0")
        _require(c.box_halfwidth is None or c.box_halfwidth > 0, "sim.box_halfwidth", "must be > 0")
        _require(c.velocity_scale >= 0, "sim.velocity_scale", "must be >= 0")
        _require(c.workers >= 1, "sim.workers", "must be >= 1")
    elif name == "preprocess":
        _require(c.seq_len is None or c.seq_len >= 2, "preprocess.seq_len", "must be >= 2")
        _require(
            c.joints_per_dancer is None or 3 <= c.joints_per_dancer <= 5,
            "preprocess.joints_per_dancer",
            "must be between 3 and 5",
        )
        _require(0 < c.split <= 1, "preprocess.split", "must be in (0, 1]")
        _require(0 < c.keep_ratio <= 1, "preprocess.keep_ratio", "must be in (0, 1]")
        _require(c.fps is None or c.fps > 0, "preprocess.fps", "must be > 0")
    elif name == "model":
        _require(2 <= c.n_edge_types <= 5, "model.n_edge_types", "must be between 2 and 5")
        _require(c.hidden_dim >= 1, "model.hidden_dim", "must be >= 1")
        _require(0 <= c.dropout_p < 1, "model.dropout_p", "must be in [0, 1)")
        _require(c.temperature > 0, "model.temperature", "must be > 0")
        _require(c.seq_len >= 1, "model.seq_len", "must be >= 1")
        _require(c.feature_dim in (4, 6), "model.feature_dim", "must be 4 (2D) or 6 (3D)")
        if c.prior is not None:
            _require(len(c.prior) == c.n_edge_types, "model.prior", "needs one entry per edge type")
            _require(all(p > 0 for p in c.prior), "model.prior", "entries must be > 0")
            _require(abs(sum(c.prior) - 1.0) < 1e-6, "model.prior", "must sum to 1")
    elif name == "train":
        _require(c.epochs >= 1, "train.epochs", "must be >= 1")
        _require(c.batch_size >= 1, "train.batch_size", "must be >= 1")
        _require(c.learning_rate > 0, "train.learning_rate", "must be > 0")
        _require(c.lr_decay_every >= 1, "train.lr_decay_every", "must be >= 1")
        _require(0 < c.lr_decay <= 1, "train.lr_decay", "must be in (0, 1]")
        _require(c.beta >= 0, "train.beta", "must be >= 0")
        _require(0 <= c.warmup_fraction <= 1, "train.warmup_fraction", "must be in [0, 1]")
        _require(c.augment_factor >= 0, "train.augment_factor", "must be >= 0")
        _require(c.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0")
    elif name == "eval":
        _require(0 < c.threshold <= 1, "eval.threshold", "must be in (0, 1]")
        _require(c.batch_size >= 1, "eval.batch_size", "must be >= 1")
    elif name == "render":
        _require(all(w >= 0 for w in c.windows), "render.windows", "indices must be >= 0")


CONFIG_SCHEMA = schema()

"""Run configuration: JSON document with explicit defaults and strict schema.

Every tunable the pipeline uses appears here with its default; unknown keys
are rejected and `seed` is mandatory. Sections mirror the pipeline stages:
simulate, prior, model, train, eval.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError

_SCHEMA = {
    "seed": int,
    "simulate": {
        "n_nodes": (int, 100),
        "small_world_k": (int, 8),
        "small_world_beta": (float, 0.1),
        "count": (int, 1),
        "perturb": (bool, True),
        "bin_ms": (float, 10.0),
        "sigma_ms": (float, 20.0),
        "lif": {
            "membrane_tau": (float, 10.0),
            "threshold_mV": (float, -55.0),
            "reset_mV": (float, -70.0),
            "resting_mV": (float, -70.0),
            "capacitance_pF": (float, 250.0),
            "refractory_ms": (float, 2.0),
            "syn_tau": (float, 2.0),
            "syn_weight": (float, 20.0),
            "syn_delay_ms": (float, 1.5),
            "poisson_rate_hz": (float, 1000.0),
            "poisson_weight": (float, 70.0),
            "dt_ms": (float, 0.1),
            "duration_ms": (float, 2000.0),
        },
    },
    "prior": {
        "lag_order": (int, 3),
        "top_k": (int, 8),
        "ridge": (float, 1e-6),
    },
    "model": {
        "stalk_dim": (int, 32),
        "map_dim": (int, 0),
        "rounds": (int, 2),
        "normalize": (bool, False),
        "field_width": (int, 64),
        "field_state_free": (bool, False),
        "dt": (float, 1.0),
    },
    "train": {
        "lambda1": (float, 1e-3),
        "lambda2": (float, 1e-2),
        "lr": (float, 1e-3),
        "weight_decay": (float, 1e-5),
        "scheduler": {
            "factor": (float, 0.5),
            "patience_epochs": (int, 3),
            "min_lr": (float, 1e-6),
        },
        "max_epochs": (int, 100),
        "batch_size": (int, 64),
        "folds": (int, 5),
        "ablation": (str, "full"),
        "val_fraction": (float, 0.1),
        "t_ctx": (int, 30),
        "t_hor": (int, 10),
        "stride": (int, 40),
    },
    "eval": {
        "t_ctx": (int, 30),
        "t_hor": (int, 10),
    },
}


def default_config(seed: int) -> dict:
    """The fully explicit default configuration."""
    def build(schema):
        out = {}
        for key, spec in schema.items():
            if key == "seed":
                continue
            if isinstance(spec, dict):
                out[key] = build(spec)
            else:
                out[key] = spec[1]
        return out

    cfg = build(_SCHEMA)
    cfg["seed"] = int(seed)
    return cfg


def validate_config(raw: dict) -> dict:
    """Fill defaults, coerce numeric types, reject unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "seed" not in raw:
        raise ConfigError("config is missing the mandatory 'seed'")
    if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError("'seed' must be an integer")

    def walk(schema, node, path):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'} must be an object")
        unknown = set(node) - set(schema)
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} under {path or 'config'}")
        out = {}
        for key, spec in schema.items():
            if key == "seed":
                continue
            child_path = f"{path}.{key}" if path else key
            if isinstance(spec, dict):
                out[key] = walk(spec, node.get(key, {}), child_path)
                continue
            kind, default = spec
            value = node.get(key, default)
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if kind is int and isinstance(value, bool):
                raise ConfigError(f"{child_path} must be {kind.__name__}")
            if not isinstance(value, kind):
                raise ConfigError(f"{child_path} must be {kind.__name__}")
            out[key] = value
        return out

    top = {k: v for k, v in raw.items() if k != "seed"}
    cfg = walk({k: v for k, v in _SCHEMA.items() if k != "seed"}, top, "")
    cfg["seed"] = raw["seed"]
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

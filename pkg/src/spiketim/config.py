"""Run configuration: JSON schema, defaults, validation, dotted overrides.

The schema is strict: unknown keys are rejected rather than ignored, so a
typo in an experiment file fails loudly.
"""

import json
from pathlib import Path

from .attention import TIMConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .neuron import LIFConfig

DEFAULTS = {
    "model": {
        "num_steps": 10,
        "height": 8,
        "width": 8,
        "in_channels": 2,
        "sps_stages": 2,
        "embed_dim": 16,
        "num_heads": 2,
        "depth": 1,
        "mlp_ratio": 2.0,
        "num_classes": 2,
        "attn_scale": 0.125,
        "mode": "tim",
        "tim_kernel_size": 3,
        "tau": 2.0,
        "v_threshold": 1.0,
        "surrogate_a": 2.0,
    },
    "training": {
        "epochs": 50,
        "batch_size": 16,
        "lr0": 0.005,
        "lr_min": 0.0,
        "weight_decay": 0.01,
        "alpha": 0.5,
        "seed": 0,
        "save_interval": 0,
        "grad_clip": None,
        "warmup_epochs": 0,
        "target_acc": None,
    },
    "data": {
        "path": None,
        "val_fraction": 1.0 / 6.0,
        "accumulate": "count",
        "synthetic": {
            "num_samples": 1200,
            "grid": 8,
            "events_per_cell": 2,
            "noise_rate": 2.0,
        },
    },
    "output_dir": "runs/out",
}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigurationError(f"config section {path or '<root>'} must be an object")
    out = {}
    for key, default in defaults.items():
        if key in given:
            val = given[key]
            if isinstance(default, dict) and val is not None:
                out[key] = _merge(default, val, f"{path}{key}.")
            else:
                out[key] = val
        else:
            out[key] = json.loads(json.dumps(default))  # deep copy
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigurationError(
            f"unknown config key(s): {sorted(path + k for k in unknown)}"
        )
    return out


def load_run_config(path, overrides=(), seed=None):
    """Load, validate, and apply dotted-path overrides; returns a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from None
    cfg = _merge(DEFAULTS, raw)
    for ov in overrides:
        apply_override(cfg, ov)
    if seed is not None:
        cfg["training"]["seed"] = int(seed)
    validate(cfg)
    return cfg


def apply_override(cfg, override):
    if "=" not in override:
        raise ConfigurationError(f"override must be key.path=value, got {override!r}")
    key, _, value = override.partition("=")
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass  # bare strings stay strings
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigurationError(f"unknown config key in override: {key}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigurationError(f"unknown config key in override: {key}")
    if isinstance(node[leaf], dict):
        raise ConfigurationError(f"override target {key} is a section, not a value")
    node[leaf] = value


def validate(cfg):
    build_model_config(cfg)  # raises on bad geometry/divisibility
    t = cfg["training"]
    if t["epochs"] < 1 or t["batch_size"] < 1:
        raise ConfigurationError("training.epochs and training.batch_size must be >= 1")
    if t["lr0"] < 0:
        raise ConfigurationError("training.lr0 must be non-negative")
    if not 0.0 <= t["alpha"] <= 1.0:
        raise ConfigurationError(f"training.alpha must be in [0, 1], got {t['alpha']}")
    if t["seed"] is None:
        raise ConfigurationError("training.seed is required; runs take no implicit entropy")
    d = cfg["data"]
    if d["path"] is not None and not Path(d["path"]).exists():
        raise ConfigurationError(f"data.path does not exist: {d['path']}")
    if not 0.0 < d["val_fraction"] < 1.0:
        raise ConfigurationError("data.val_fraction must be in (0, 1)")


def build_model_config(cfg):
    m = cfg["model"]
    alpha = cfg["training"]["alpha"]
    return ModelConfig(
        num_steps=m["num_steps"],
        height=m["height"],
        width=m["width"],
        in_channels=m["in_channels"],
        sps_stages=m["sps_stages"],
        embed_dim=m["embed_dim"],
        num_heads=m["num_heads"],
        depth=m["depth"],
        mlp_ratio=m["mlp_ratio"],
        num_classes=m["num_classes"],
        attn_scale=m["attn_scale"],
        tim=TIMConfig(alpha=alpha, kernel_size=m["tim_kernel_size"], mode=m["mode"]),
        lif=LIFConfig(
            tau=m["tau"], v_threshold=m["v_threshold"], surrogate_a=m["surrogate_a"]
        ),
    )

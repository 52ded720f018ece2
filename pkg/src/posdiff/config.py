"""Run configuration: a YAML file with dataset/model/diffusion/train/eval sections.

Every key has a default; unknown sections or keys are rejected so typos do
not silently fall back to defaults.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

import yaml

DEFAULTS = {
    "dataset": {
        "kind": None,  # derived from the task when left empty
        "count": 2000,
        "splits": [0.8, 0.1, 0.1],
        "seed": 0,
        "image_size": 96,
        "puzzle_sizes": [3, 4],
        "k_min": 3,
        "k_max": 8,
        "vocab": 512,
        "tokens_per_element": 4,
        "source_dir": None,
    },
    "model": {
        "task": "puzzle",
        "width": 128,
        "heads": 4,
        "e": 32,
        "d": 64,
    },
    "diffusion": {
        "T": 300,
        "inference_ratio": 10,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "init_mode": "zero-centered",
    },
    "train": {
        "epochs": 10,
        "batch_size": 32,
        "lr": 1e-3,
        "adam_betas": [0.9, 0.999],
        "grad_clip": 1.0,
        "seed": 0,
        "checkpoint_every": 0,
        "max_steps": None,
        "time_budget": None,
        "log_every": 50,
    },
    "eval": {
        "split": "test",
        "chunk": 64,
        "seed": 0,
    },
}


class ConfigError(ValueError):
    pass


def merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {where}{key!r} must be a mapping")
            out[key] = merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the YAML file at ``path``, then ``overrides`` (from flags)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping of sections")
        cfg = merge(cfg, data)
    if overrides:
        cfg = merge(cfg, overrides)
    return validate(cfg)


def validate(cfg: dict) -> dict:
    task = cfg["model"]["task"]
    if task not in ("puzzle", "sequence"):
        raise ConfigError(f"model.task must be 'puzzle' or 'sequence', got {task!r}")
    if cfg["dataset"]["kind"] is None:
        cfg["dataset"]["kind"] = "procedural-image" if task == "puzzle" else "synthetic-sequence"
    lr = cfg["train"]["lr"]
    if not isinstance(lr, (int, float)) or lr <= 0:
        raise ConfigError(f"train.lr must be positive, got {lr!r}")
    for section, key in (("train", "epochs"), ("train", "batch_size"), ("diffusion", "T"),
                         ("diffusion", "inference_ratio"), ("dataset", "count")):
        value = cfg[section][key]
        if not isinstance(value, int) or value < (0 if key == "epochs" else 1):
            raise ConfigError(f"{section}.{key} must be a {'non-negative' if key == 'epochs' else 'positive'} integer")
    if cfg["diffusion"]["init_mode"] not in ("zero-centered", "standard-gaussian"):
        raise ConfigError("diffusion.init_mode must be 'zero-centered' or 'standard-gaussian'")
    if cfg["model"]["width"] % cfg["model"]["heads"]:
        raise ConfigError("model.width must be divisible by model.heads")
    return cfg


def dump(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)

"""Desk-scale training runs behind the trained-model acceptance checks.

Each run is fully determined by its config and the code that trains it, so
the finished checkpoint is cached under ``artifacts/acceptance`` (override
with ``POSDIFF_ACCEPTANCE_DIR``) keyed by a hash of both. A missing or stale
cache entry is retrained from scratch; the recorded wall time is what the
time-budget checks read.

Run ``python tests/acceptance_runs.py {puzzle,sequence}`` to build a cache
entry outside pytest.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path

from posdiff.checkpoint import decode, load_checkpoint
from posdiff.data import DatasetSpec, generate
from posdiff.training import TrainConfig, task_instances, train

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src" / "posdiff"
TRAINING_SOURCES = ["diffusion.py", "denoiser.py", "model.py", "training.py", "data.py", "checkpoint.py",
                    "tasks/encoders.py", "tasks/instances.py", "tasks/grid.py"]

RUNS = {
    "puzzle": {
        "dataset": dict(kind="procedural-image", count=2000, seed=0, image_size=96, puzzle_sizes=(3, 4)),
        "train": dict(task="puzzle", T=300, inference_ratio=10, epochs=60, batch_size=32, lr=1e-3,
                      puzzle_sizes=(3, 4), seed=0, width=128, heads=4, e=32, d=64, log_every=500),
        "budget_seconds": 2 * 3600,
    },
    "sequence": {
        "dataset": dict(kind="synthetic-sequence", count=5000, seed=0, k_min=3, k_max=8),
        "train": dict(task="sequence", T=300, inference_ratio=10, epochs=40, batch_size=32, lr=1e-3,
                      seed=0, width=128, heads=4, e=32, d=64, log_every=500),
        "budget_seconds": 90 * 60,
    },
}


def cache_dir() -> Path:
    return Path(os.environ.get("POSDIFF_ACCEPTANCE_DIR", ROOT / "artifacts" / "acceptance"))


def run_key(name: str) -> str:
    h = hashlib.sha256(json.dumps(RUNS[name], sort_keys=True, default=list).encode())
    for rel in TRAINING_SOURCES:
        h.update((SRC / rel).read_bytes())
    return h.hexdigest()[:16]


def dataset(name: str):
    return generate(DatasetSpec(**RUNS[name]["dataset"]))


def trained_run(name: str, ds=None):
    """Returns ``(model, meta, dataset, cfg)``, training first if the cache is stale."""
    spec = RUNS[name]
    cfg = TrainConfig(**spec["train"])
    ds = ds if ds is not None else dataset(name)
    out = cache_dir() / name
    path = out / "last.ckpt"
    key = run_key(name)
    fresh = path.exists() and decode(path.read_bytes())[1].get("run_key") == key
    if not fresh:
        for stale in out.glob("*"):
            stale.unlink()
        instances = task_instances(ds, "train", cfg.task, cfg.puzzle_sizes)
        train(cfg, instances, out_dir=out, meta_extra={"run_key": key})
    model, meta, _ = load_checkpoint(path, task=cfg.task)
    return model, meta, ds, cfg


if __name__ == "__main__":
    import logging

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in sys.argv[1:] or list(RUNS):
        _, meta, _, _ = trained_run(name)
        print(name, "steps", meta["step"], "wall_time", round(meta["wall_time"], 1), flush=True)

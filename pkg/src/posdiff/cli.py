"""Command line entry point: ``posdiff {gen,train,eval,solve}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from posdiff.checkpoint import CheckpointMismatchError, load_checkpoint, save_checkpoint
from posdiff.config import ConfigError, dump, load_config
from posdiff.data import DatasetSpec, generate, read_dataset, write_dataset
from posdiff.diffusion import STANDARD_GAUSSIAN, ZERO_CENTERED, DiffusionConfig
from posdiff.tasks.instances import (
    PuzzleInstance,
    puzzle_from_image,
    sequence_from_elements,
    shuffle_instance,
)
from posdiff.training import (
    TrainConfig,
    checkpoint_meta,
    decode,
    evaluate,
    new_model,
    predict_positions,
    task_instances,
    train,
)

logger = logging.getLogger("posdiff")

INIT_FLAGS = {"zero": ZERO_CENTERED, "gaussian": STANDARD_GAUSSIAN}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def resolve_config(args) -> dict:
    overrides: dict = {}
    if getattr(args, "task", None):
        overrides.setdefault("model", {})["task"] = args.task
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("dataset", {})["seed"] = args.seed
        overrides.setdefault("train", {})["seed"] = args.seed
        overrides.setdefault("eval", {})["seed"] = args.seed
    if getattr(args, "init", None):
        overrides.setdefault("diffusion", {})["init_mode"] = INIT_FLAGS[args.init]
    if getattr(args, "epochs", None) is not None:
        overrides.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        overrides.setdefault("train", {})["lr"] = args.lr
    return load_config(args.config, overrides)


def file_sets(path, section: str, key: str) -> bool:
    """Whether the YAML file at ``path`` sets ``section.key`` explicitly."""
    if not path:
        return False
    data = yaml.safe_load(Path(path).read_text()) or {}
    return key in (data.get(section) or {})


def dataset_spec(cfg: dict) -> DatasetSpec:
    return DatasetSpec(**cfg["dataset"])


def train_config(cfg: dict) -> TrainConfig:
    tr, diff, model, ds = cfg["train"], cfg["diffusion"], cfg["model"], cfg["dataset"]
    return TrainConfig(
        task=model["task"], T=diff["T"], inference_ratio=diff["inference_ratio"],
        beta_start=diff["beta_start"], beta_end=diff["beta_end"], init_mode=diff["init_mode"],
        epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"], adam_betas=tuple(tr["adam_betas"]),
        grad_clip=tr["grad_clip"], seed=tr["seed"], checkpoint_every=tr["checkpoint_every"],
        max_steps=tr["max_steps"], log_every=tr["log_every"], puzzle_sizes=tuple(ds["puzzle_sizes"]),
        width=model["width"], heads=model["heads"], e=model["e"], d=model["d"], vocab=ds["vocab"],
    )


def prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def eval_diffusion(meta: dict, cfg: dict, init_mode: str, config_path) -> DiffusionConfig:
    """Sampling config embedding the checkpoint's training schedule."""
    sched = meta["schedule"]
    if file_sets(config_path, "diffusion", "T") and cfg["diffusion"]["T"] != sched["T"]:
        raise UsageError(f"schedule mismatch: checkpoint T={sched['T']}, config T={cfg['diffusion']['T']}")
    r = cfg["diffusion"]["inference_ratio"]
    if not file_sets(config_path, "diffusion", "inference_ratio"):
        r = meta.get("train_config", {}).get("inference_ratio", r)
    return DiffusionConfig(T=sched["T"], inference_ratio=r, init_mode=init_mode,
                           position_dim=meta["model"]["denoiser"]["n"],
                           beta_start=sched["beta_start"], beta_end=sched["beta_end"])


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    out = prepare_out(args.out, args.force)
    for stale in ("manifest.json", "sequences.jsonl"):
        (out / stale).unlink(missing_ok=True)
    shutil.rmtree(out / "images", ignore_errors=True)
    ds = generate(dataset_spec(cfg))
    write_dataset(ds, out)
    (out / "config.resolved.yaml").write_text(dump(cfg))
    counts = {s: len(ds.split(s)) for s in ("train", "val", "test")}
    print(json.dumps({"out": str(out), "items": len(ds.entries), **counts}))
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    tcfg = train_config(cfg)
    ds = read_dataset(args.data)
    sizes = tuple(cfg["dataset"]["puzzle_sizes"])
    out = Path(args.out)
    if args.resume is None:
        out = prepare_out(out, args.force)
        (out / "train_log.jsonl").unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(dump(cfg))

    train_set = task_instances(ds, "train", tcfg.task, sizes)
    if tcfg.epochs == 0:
        model = new_model(tcfg)
        save_checkpoint(model, checkpoint_meta(tcfg, 0, 0.0), out / "last.ckpt")
        print(json.dumps({"checkpoint": str(out / "last.ckpt"), "steps": 0}))
        return 0

    result = train(tcfg, train_set, out_dir=out, resume_from=args.resume,
                   stop_after=args.stop_after, time_budget=cfg["train"]["time_budget"])
    summary = {"checkpoint": str(out / "last.ckpt"), "steps": result.step, "wall_time": round(result.wall_time, 1)}
    val = ds.split("val")
    if val and args.stop_after is None:
        rep, _ = evaluate(result.model, task_instances(ds, "val", tcfg.task, sizes), tcfg.diffusion(),
                          chunk=cfg["eval"]["chunk"])
        (out / "val_report.txt").write_text(rep.to_text())
        summary["val"] = rep.as_dict()
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ds = read_dataset(args.data)
    task = "sequence" if ds.spec.kind == "synthetic-sequence" else "puzzle"
    model, meta, _ = load_checkpoint(args.checkpoint, task=None if args.oracle else task)
    init_mode = INIT_FLAGS[args.init] if args.init else cfg["diffusion"]["init_mode"]
    dcfg = eval_diffusion(meta, cfg, init_mode, args.config)
    if dcfg.position_dim != (2 if task == "puzzle" else 1):
        raise UsageError(f"dimension mismatch: checkpoint n={dcfg.position_dim} cannot score a {task} dataset")
    split = args.split or cfg["eval"]["split"]
    instances = task_instances(ds, split, task, tuple(ds.spec.puzzle_sizes))
    if not instances:
        raise UsageError(f"split {split!r} is empty")
    rng = np.random.default_rng([cfg["eval"]["seed"], 3]) if init_mode == STANDARD_GAUSSIAN else None
    rep, _ = evaluate(None if args.oracle else model, instances, dcfg, rng, oracle=args.oracle,
                      chunk=cfg["eval"]["chunk"])
    text = rep.to_text()
    sys.stdout.write(text)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    tag = "oracle" if args.oracle else ("zero" if init_mode == ZERO_CENTERED else "gaussian")
    (out / f"report_{split}_{tag}.txt").write_text(text)
    return 0


def load_solve_input(path: Path, task: str, n: int | None, seed: int, shuffle: bool):
    is_image = path.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    if is_image != (task == "puzzle"):
        kind = "image" if is_image else "sequence"
        raise UsageError(f"task mismatch: {kind} input cannot be solved by a {task} checkpoint")
    if is_image:
        with Image.open(path) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        inst = puzzle_from_image(image, n, path.stem)
    else:
        data = json.loads(path.read_text())
        elements = data["elements"] if isinstance(data, dict) else data
        inst = sequence_from_elements(elements, path.stem)
    return shuffle_instance(inst, seed) if shuffle else inst


def render_frame(inst: PuzzleInstance, positions: np.ndarray, size: int = 320) -> Image.Image:
    """Paste each patch centred at its continuous position; [-1.25, 1.25]^2 spans the canvas."""
    canvas = Image.new("RGB", (size, size), (255, 255, 255))
    cell = max(2, int(round(size / 2.5 * 2 / inst.n)))
    for patch, (x, y) in zip(inst.patches, positions):
        arr = patch if patch.dtype == np.uint8 else np.round(np.clip(patch, 0, 1) * 255).astype(np.uint8)
        tile = Image.fromarray(arr).resize((cell, cell), Image.BILINEAR)
        cx = (x + 1.25) / 2.5 * size
        cy = (y + 1.25) / 2.5 * size
        canvas.paste(tile, (int(round(cx - cell / 2)), int(round(cy - cell / 2))))
    return canvas


def cmd_solve(args) -> int:
    cfg = resolve_config(args)
    path = Path(args.input)
    try:
        model, meta, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    task = meta["model"]["task"]
    sizes = meta.get("train_config", {}).get("puzzle_sizes", [3])
    inst = load_solve_input(path, task, args.n or sizes[0], cfg["eval"]["seed"], args.shuffle)
    init_mode = INIT_FLAGS[args.init] if args.init else cfg["diffusion"]["init_mode"]
    dcfg = eval_diffusion(meta, cfg, init_mode, args.config)
    rng = np.random.default_rng([cfg["eval"]["seed"], 3]) if init_mode == STANDARD_GAUSSIAN else None

    frames = []
    callback = (lambda t, x: frames.append((t, x))) if args.frames else None
    (positions,) = predict_positions(model, [inst], dcfg, rng, callback=callback)
    assignment = decode(inst, positions)
    result = {
        "task": task,
        "assignment": assignment.tolist(),
        "positions": np.round(positions, 6).tolist(),
        "shuffle_perm": inst.shuffle_perm.tolist(),
    }
    if isinstance(inst, PuzzleInstance):
        result["n"] = inst.n
    print(json.dumps(result))

    if args.frames:
        out = Path(args.out or "frames")
        out.mkdir(parents=True, exist_ok=True)
        for t, x in frames:
            snap = {"t": int(t), "positions": np.round(x, 6).tolist()}
            (out / f"t{t:04d}.json").write_text(json.dumps(snap) + "\n")
            if isinstance(inst, PuzzleInstance):
                render_frame(inst, x).save(out / f"t{t:04d}.png")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides every seed in the config")
    common.add_argument("--task", choices=("puzzle", "sequence"))
    common.add_argument("--init", choices=tuple(INIT_FLAGS), help="reverse-process initialization")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="posdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a dataset")
    gen.set_defaults(func=cmd_gen, require_out=True)

    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("--data", required=True, help="dataset directory written by 'gen'")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    tr.set_defaults(func=cmd_train, require_out=True)

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=("train", "val", "test"))
    ev.add_argument("--oracle", action="store_true", help="replace the network by the ground-truth oracle")
    ev.set_defaults(func=cmd_eval, require_out=False)

    so = sub.add_parser("solve", parents=[common], help="solve one image or sequence")
    so.add_argument("--checkpoint", required=True)
    so.add_argument("--input", required=True, help="PNG image (puzzle) or JSON token lists (sequence)")
    so.add_argument("--n", type=int, help="puzzle grid side")
    so.add_argument("--shuffle", action="store_true", help="shuffle the input before solving")
    so.add_argument("--frames", action="store_true", help="write per-timestep snapshots to --out")
    so.set_defaults(func=cmd_solve, require_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.require_out and not args.out:
        parser.error(f"{args.command} needs --out")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointMismatchError) as exc:
        print(f"posdiff {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        logger.debug("failure", exc_info=True)
        print(f"posdiff {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

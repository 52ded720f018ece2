"""Training loop (noise prediction) and evaluation (sampling, decoding, metrics)."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from posdiff import metrics
from posdiff.checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from posdiff.data import Dataset
from posdiff.denoiser import DivergenceError, GraphBatch, as_numpy_fn, graph_index_from_sizes
from posdiff.diffusion import (
    STANDARD_GAUSSIAN,
    ZERO_CENTERED,
    DiffusionConfig,
    NoiseSchedule,
    build_linear_schedule,
    forward_sample,
    oracle_denoiser,
    reverse_process,
)
from posdiff.model import TASKS, OrderingModel, build_model
from posdiff.tasks.decode import greedy_assign, order_from_positions
from posdiff.tasks.encoders import pad_tokens
from posdiff.tasks.grid import make_grid
from posdiff.tasks.instances import (
    PuzzleInstance,
    SequenceInstance,
    patchify,
    sequence_from_elements,
    shuffle_instance,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    task: str = "puzzle"
    T: int = 300
    inference_ratio: int = 10
    beta_start: float = 1e-4
    beta_end: float = 0.02
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0
    puzzle_sizes: tuple = (3, 4)
    seed: int = 0
    checkpoint_every: int = 0
    init_mode: str = ZERO_CENTERED
    width: int = 128
    heads: int = 4
    e: int = 32
    d: int = 64
    vocab: int = 512
    max_steps: Optional[int] = None
    log_every: int = 50

    def __post_init__(self):
        self.puzzle_sizes = tuple(int(n) for n in self.puzzle_sizes)
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {tuple(TASKS)}, got {self.task!r}")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValueError(f"learning rate must be a finite non-negative number, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.seed is None:
            raise ValueError("a seed is mandatory")
        if not self.puzzle_sizes or min(self.puzzle_sizes) < 1:
            raise ValueError("puzzle_sizes must list positive grid sides")
        self.diffusion()  # validates T / inference_ratio / init_mode

    def diffusion(self, init_mode: Optional[str] = None) -> DiffusionConfig:
        return DiffusionConfig(
            T=self.T,
            inference_ratio=self.inference_ratio,
            init_mode=init_mode or self.init_mode,
            position_dim=TASKS[self.task],
            beta_start=self.beta_start,
            beta_end=self.beta_end,
        )

    def schedule(self) -> NoiseSchedule:
        return build_linear_schedule(self.T, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["puzzle_sizes"] = list(self.puzzle_sizes)
        d["adam_betas"] = list(self.adam_betas)
        return d


# ---------------------------------------------------------------- instances

def puzzle_instances(dataset: Dataset, split: str, sizes: Sequence[int], quantize: bool = True) -> list:
    """One shuffled puzzle per (image, grid size) in ``split``.

    Patches are kept as uint8 to bound memory on larger datasets.
    """
    out = []
    for entry in dataset.split(split):
        image = dataset.items[entry.id].astype(np.float32) / 255.0
        for n in sizes:
            patches = patchify(image, n)
            if quantize:
                patches = np.round(np.clip(patches, 0, 1) * 255).astype(np.uint8)
            K = n * n
            inst = PuzzleInstance(patches, n, np.arange(K), np.arange(K), entry.id)
            out.append(shuffle_instance(inst, [entry.seed, n]))
    return out


def sequence_instances(dataset: Dataset, split: str) -> list:
    return [
        shuffle_instance(sequence_from_elements(dataset.items[e.id], e.id), [e.seed, 1])
        for e in dataset.split(split)
    ]


def task_instances(dataset: Dataset, split: str, task: str, sizes=(3, 4)) -> list:
    if task == "puzzle":
        if dataset.spec.kind == "synthetic-sequence":
            raise ValueError("task mismatch: puzzle task needs an image dataset")
        return puzzle_instances(dataset, split, sizes)
    if dataset.spec.kind != "synthetic-sequence":
        raise ValueError("task mismatch: sequence task needs a sequence dataset")
    return sequence_instances(dataset, split)


def collate(instances: Sequence) -> tuple:
    """Raw encoder input, ground-truth positions and graph sizes for a batch."""
    if not instances:
        raise ValueError("empty batch")
    sizes = [inst.K for inst in instances]
    x0 = np.concatenate([inst.positions() for inst in instances]).astype(np.float64)
    if isinstance(instances[0], PuzzleInstance):
        raw = torch.from_numpy(np.concatenate([inst.patches for inst in instances]))
    elif isinstance(instances[0], SequenceInstance):
        raw = pad_tokens([el for inst in instances for el in inst.elements])
    else:
        raise TypeError(f"unsupported instance type {type(instances[0]).__name__}")
    return raw, x0, sizes


def model_task(instances: Sequence) -> str:
    return "puzzle" if isinstance(instances[0], PuzzleInstance) else "sequence"


# ---------------------------------------------------------------- training

def make_optimizer(model: OrderingModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.adam_betas)


def train_step(model: OrderingModel, optimizer: torch.optim.Optimizer, instances: Sequence,
               sched: NoiseSchedule, rng: np.random.Generator, grad_clip: float = 1.0,
               batch_id=None) -> float:
    """One noise-prediction update; returns the batch loss before the update.

    Draws one timestep per graph uniformly from 1..T and unit Gaussian noise
    per node, noises the true positions in closed form and regresses the noise.
    """
    raw, x0, sizes = collate(instances)
    ts = rng.integers(1, sched.T + 1, size=len(sizes))
    eps = rng.standard_normal(x0.shape)
    bounds = np.cumsum([0] + sizes)
    x_t = np.concatenate([
        forward_sample(x0[a:b], int(t), eps[a:b], sched) for a, b, t in zip(bounds[:-1], bounds[1:], ts)
    ])
    dtype = next(model.parameters()).dtype
    batch = GraphBatch(raw, torch.as_tensor(x_t, dtype=dtype), torch.as_tensor(ts), graph_index_from_sizes(sizes))

    model.train()
    optimizer.zero_grad(set_to_none=True)
    eps_hat = model(batch)
    loss = torch.nn.functional.mse_loss(eps_hat, torch.as_tensor(eps, dtype=dtype))
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss.item()} on batch {batch_id}")
    loss.backward()
    if grad_clip and grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return loss.item()


def steps_per_epoch(num_instances: int, batch_size: int) -> int:
    return max(1, math.ceil(num_instances / batch_size))


def batch_indices(num_instances: int, cfg: TrainConfig, step: int) -> np.ndarray:
    """Instance ids for global ``step``; composition is a function of (seed, epoch)."""
    spe = steps_per_epoch(num_instances, cfg.batch_size)
    epoch, b = divmod(step, spe)
    perm = np.random.default_rng([cfg.seed, 2, epoch]).permutation(num_instances)
    return perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]


def step_rng(cfg: TrainConfig, step: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 1, step])


@dataclass
class TrainResult:
    model: OrderingModel
    optimizer: torch.optim.Optimizer
    step: int
    losses: list = field(default_factory=list)
    wall_time: float = 0.0


def new_model(cfg: TrainConfig) -> OrderingModel:
    return build_model(cfg.task, cfg.seed, d=cfg.d, width=cfg.width, heads=cfg.heads, e=cfg.e, T=cfg.T,
                       vocab=cfg.vocab)


def checkpoint_meta(cfg: TrainConfig, step: int, wall_time: float, extra: Optional[dict] = None) -> dict:
    meta = {
        "schedule": {"T": cfg.T, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
        "train_config": cfg.to_dict(),
        "step": int(step),
        "wall_time": float(wall_time),
    }
    if extra:
        meta.update(extra)
    return meta


def train(cfg: TrainConfig, instances: Sequence, *, out_dir=None, resume_from=None,
          stop_after: Optional[int] = None, time_budget: Optional[float] = None,
          on_step: Optional[Callable[[int, float], None]] = None, meta_extra: Optional[dict] = None) -> TrainResult:
    """Run ``cfg.epochs`` passes over ``instances`` (or ``cfg.max_steps`` updates).

    With ``out_dir`` a line-delimited ``train_log.jsonl`` is appended and
    checkpoints are written every ``cfg.checkpoint_every`` steps plus at the end.
    ``stop_after`` halts early at that global step (used to simulate an
    interruption); ``time_budget`` (seconds) stops at the first step past it.
    ``meta_extra`` is merged into every checkpoint header.
    """
    if not instances:
        raise ValueError("no training instances")
    if model_task(instances) != cfg.task:
        raise ValueError(f"task mismatch: config says {cfg.task!r}, data is {model_task(instances)!r}")
    sched = cfg.schedule()
    spe = steps_per_epoch(len(instances), cfg.batch_size)
    total = cfg.epochs * spe if cfg.max_steps is None else min(cfg.max_steps, cfg.epochs * spe)

    elapsed_before = 0.0
    if resume_from is not None:
        model, meta, arrays = load_checkpoint(resume_from, task=cfg.task)
        if meta["schedule"]["T"] != cfg.T:
            raise ValueError(f"schedule mismatch: checkpoint T={meta['schedule']['T']}, config T={cfg.T}")
        optimizer = make_optimizer(model, cfg)
        start = int(meta["step"])
        restore_optimizer(model, optimizer, arrays, meta.get("optimizer_step", start))
        elapsed_before = float(meta.get("wall_time", 0.0))
    else:
        model = new_model(cfg)
        optimizer = make_optimizer(model, cfg)
        start = 0

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "a")

    losses = []
    t0 = time.perf_counter()
    step = start
    try:
        while step < total:
            if stop_after is not None and step >= stop_after:
                break
            if time_budget is not None and elapsed_before + time.perf_counter() - t0 > time_budget:
                logger.warning("time budget of %.0fs reached at step %d", time_budget, step)
                break
            idx = batch_indices(len(instances), cfg, step)
            loss = train_step(model, optimizer, [instances[i] for i in idx], sched, step_rng(cfg, step),
                              cfg.grad_clip, batch_id=step)
            losses.append(loss)
            step += 1
            if on_step is not None:
                on_step(step, loss)
            if log_fh is not None:
                log_fh.write(json.dumps({"step": step, "loss": loss, "lr": cfg.lr,
                                         "wall_time": round(elapsed_before + time.perf_counter() - t0, 3)}) + "\n")
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info("step %d/%d loss %.4f", step, total, float(np.mean(losses[-cfg.log_every:])))
            if out is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(model, checkpoint_meta(cfg, step, elapsed_before + time.perf_counter() - t0, meta_extra),
                                out / f"step_{step:07d}.ckpt", optimizer)
    finally:
        if log_fh is not None:
            log_fh.close()

    wall = elapsed_before + time.perf_counter() - t0
    if out is not None:
        save_checkpoint(model, checkpoint_meta(cfg, step, wall, meta_extra), out / "last.ckpt", optimizer)
    return TrainResult(model, optimizer, step, losses, wall)


# ---------------------------------------------------------------- evaluation

@dataclass
class Prediction:
    instance: object
    positions: np.ndarray
    assignment: np.ndarray
    truth: np.ndarray


def decode(instance, positions: np.ndarray) -> np.ndarray:
    if isinstance(instance, PuzzleInstance):
        return greedy_assign(positions, make_grid(instance.n))
    return order_from_positions(positions)


def truth_of(instance) -> np.ndarray:
    return instance.gt_cell if isinstance(instance, PuzzleInstance) else instance.gt_rank


def predict_positions(model: OrderingModel, instances: Sequence, cfg: DiffusionConfig,
                      rng: Optional[np.random.Generator] = None, *, oracle: bool = False,
                      chunk: int = 64, callback=None) -> list:
    """Continuous positions for every instance via the reverse process.

    Instances are processed ``chunk`` at a time as one block-diagonal batch;
    every graph in a chunk visits the same timesteps.
    """
    if model is not None and model.T != cfg.T:
        raise ValueError(f"schedule mismatch: model trained with T={model.T}, config T={cfg.T}")
    if cfg.init_mode == STANDARD_GAUSSIAN and rng is None:
        raise ValueError("gaussian initialization needs an rng")
    sched = cfg.schedule()
    out = []
    if model is not None:
        model.eval()
    for start in range(0, len(instances), chunk):
        part = instances[start:start + chunk]
        raw, x0, sizes = collate(part)
        if x0.shape[1] != cfg.position_dim:
            raise ValueError(f"task/decoder mismatch: data is {x0.shape[1]}-D, config {cfg.position_dim}-D")
        if oracle:
            fn = oracle_denoiser(x0, sched)
        else:
            if model.n != cfg.position_dim:
                raise ValueError(f"dimension mismatch: model n={model.n}, config n={cfg.position_dim}")
            with torch.no_grad():
                feats = model.encode(raw)
            fn = as_numpy_fn(model.denoiser, feats, graph_index_from_sizes(sizes))
        x = reverse_process(fn, None, cfg, sched, rng, num_nodes=len(x0), callback=callback)
        bounds = np.cumsum([0] + sizes)
        out.extend(x[a:b] for a, b in zip(bounds[:-1], bounds[1:]))
    return out


def evaluate(model: Optional[OrderingModel], instances: Sequence, cfg: DiffusionConfig,
             rng: Optional[np.random.Generator] = None, *, oracle: bool = False, chunk: int = 64):
    """Sample, decode and score; returns ``(MetricsReport, predictions)``.

    ``oracle=True`` replaces the network by the consistent-noise oracle that
    steers every chain to the ground truth (a decoder/metrics sanity hook).
    """
    if not instances:
        raise ValueError("nothing to evaluate")
    task = model_task(instances)
    if model is not None and not oracle and model.task != task:
        raise ValueError(f"task mismatch: model is for {model.task!r}, instances are {task!r}")
    positions = predict_positions(model, instances, cfg, rng, oracle=oracle, chunk=chunk)
    preds = [Prediction(inst, pos, decode(inst, pos), truth_of(inst)) for inst, pos in zip(instances, positions)]
    rep = metrics.report([(p.assignment, p.truth) for p in preds], ranked=(task == "sequence"))
    return rep, preds

"""Encoder + denoiser bundle trained end to end for one task."""

from __future__ import annotations

from dataclasses import replace

import torch
import torch.nn as nn

from posdiff.denoiser import NUM_LAYERS, GraphBatch, GraphDenoiser, init_params
from posdiff.tasks.encoders import PatchEncoder, SequenceEncoder, build_encoder

TASKS = {"puzzle": 2, "sequence": 1}


class OrderingModel(nn.Module):
    """``forward`` takes a :class:`GraphBatch` whose ``h`` holds raw element
    inputs (patch pixels or padded token ids) and returns per-node noise."""

    def __init__(self, task: str, encoder: nn.Module, denoiser: GraphDenoiser):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        if denoiser.n != TASKS[task]:
            raise ValueError(f"{task} positions are {TASKS[task]}-D, denoiser has n={denoiser.n}")
        self.task = task
        self.encoder = encoder
        self.denoiser = denoiser

    @property
    def n(self) -> int:
        return self.denoiser.n

    @property
    def T(self) -> int:
        return self.denoiser.T

    def encode(self, raw) -> torch.Tensor:
        return self.encoder(raw)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        return self.denoiser(replace(batch, h=self.encoder(batch.h)))

    def config(self) -> dict:
        return {
            "task": self.task,
            "encoder": self.encoder.config(),
            "denoiser": self.denoiser.dims(),
            "num_layers": NUM_LAYERS,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "OrderingModel":
        if cfg.get("num_layers", NUM_LAYERS) != NUM_LAYERS:
            raise ValueError(f"checkpoint has {cfg['num_layers']} layers, expected {NUM_LAYERS}")
        dims = cfg["denoiser"]
        return cls(cfg["task"], build_encoder(cfg["encoder"]), GraphDenoiser(**dims))


def build_model(task: str, seed: int = 0, *, d: int = 64, width: int = 128, heads: int = 4, e: int = 32,
                T: int = 300, vocab: int = 512, max_len: int = 16, channels=(16, 32, 64)) -> OrderingModel:
    """Freshly initialised model; weights are a function of ``seed`` only."""
    n = TASKS.get(task)
    if n is None:
        raise ValueError(f"unknown task {task!r}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        if task == "puzzle":
            encoder = PatchEncoder(d=d, channels=channels)
        else:
            encoder = SequenceEncoder(vocab=vocab, d=d, max_len=max_len)
    denoiser = init_params(seed + 1, width=width, heads=heads, e=e, d=d, n=n, T=T)
    return OrderingModel(task, encoder, denoiser)

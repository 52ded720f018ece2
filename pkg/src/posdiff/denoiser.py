"""Graph-transformer noise predictor over fully connected element graphs.

Several graphs are packed into one node table; attention is restricted to
each graph by a block-diagonal mask, so graphs of different sizes share a
batch without padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

NUM_LAYERS = 4


class DivergenceError(FloatingPointError):
    """Raised when a training loss stops being finite."""


@dataclass
class GraphBatch:
    """Node table for a batch of fully connected graphs.

    h: (N, d) element features; x: (N, n) noisy positions;
    t: (G,) one timestep per graph; graph_index: (N,) owning graph of each node.
    """

    h: torch.Tensor
    x: torch.Tensor
    t: torch.Tensor
    graph_index: torch.Tensor

    def __post_init__(self):
        N = self.h.shape[0]
        if self.x.shape[0] != N or self.graph_index.shape[0] != N:
            raise ValueError("h, x and graph_index must have the same number of rows")
        if N == 0:
            raise ValueError("empty graph batch")
        counts = torch.bincount(self.graph_index, minlength=len(self.t))
        if len(counts) != len(self.t) or bool((counts == 0).any()):
            raise ValueError("every graph needs at least one node and a timestep")

    def __len__(self) -> int:
        return self.h.shape[0]

    @property
    def num_graphs(self) -> int:
        return len(self.t)

    def sizes(self) -> list[int]:
        return torch.bincount(self.graph_index, minlength=self.num_graphs).tolist()

    def attention_mask(self) -> torch.Tensor:
        gi = self.graph_index
        return gi[:, None] == gi[None, :]

    def node_timesteps(self) -> torch.Tensor:
        return self.t[self.graph_index]

    def with_positions(self, x: torch.Tensor, t) -> "GraphBatch":
        t = torch.as_tensor(t, dtype=torch.long)
        if t.ndim == 0:
            t = t.expand(self.num_graphs).clone()
        return GraphBatch(self.h, x, t, self.graph_index)

    @classmethod
    def from_graphs(cls, features: Sequence, positions: Sequence, timesteps: Sequence[int]) -> "GraphBatch":
        if not (len(features) == len(positions) == len(timesteps)):
            raise ValueError("features, positions and timesteps must align per graph")
        h = torch.cat([torch.as_tensor(f) for f in features], dim=0)
        x = torch.cat([torch.as_tensor(p) for p in positions], dim=0)
        sizes = [len(f) for f in features]
        graph_index = torch.repeat_interleave(torch.arange(len(sizes)), torch.tensor(sizes))
        return cls(h, x.to(h.dtype), torch.as_tensor(timesteps, dtype=torch.long), graph_index)


def graph_index_from_sizes(sizes: Sequence[int]) -> torch.Tensor:
    return torch.repeat_interleave(torch.arange(len(sizes)), torch.as_tensor(list(sizes)))


class GraphAttentionLayer(nn.Module):
    """Pre-norm multi-head attention over each graph plus a feed-forward block."""

    def __init__(self, width: int, heads: int, ff_mult: int = 4):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = width // heads
        self.norm1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, ff_mult * width),
            nn.GELU(),
            nn.Linear(ff_mult * width, width),
        )

    def forward(self, z: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        N, W = z.shape
        q, k, v = self.qkv(self.norm1(z)).view(N, 3, self.heads, self.head_dim).unbind(1)
        q, k, v = (a.transpose(0, 1) for a in (q, k, v))  # (heads, N, head_dim)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        msg = (attn @ v).transpose(0, 1).reshape(N, W)
        z = z + self.out(msg)
        return z + self.ff(self.norm2(z))


def sinusoidal_table(T: int, e: int) -> torch.Tensor:
    """(T+1, e) sin/cos features of t used to initialise the learned embedding table.

    Rows stay free parameters; starting them smooth in t lets rarely sampled
    timesteps borrow from their neighbours early in training.
    """
    half = e // 2
    t = torch.arange(T + 1, dtype=torch.float64)[:, None]
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    pad = torch.zeros(T + 1, e - 2 * half, dtype=torch.float64)
    return torch.cat([torch.sin(t * freqs), torch.cos(t * freqs), pad], 1).float()


class GraphDenoiser(nn.Module):
    """Predicts the noise on every node position from ``[x_t; h; emb(t)]``."""

    def __init__(self, n: int, d: int, width: int = 128, heads: int = 4, e: int = 32, T: int = 300):
        super().__init__()
        if min(n, d, width, heads, e, T) < 1:
            raise ValueError("all dimensions must be positive")
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.n, self.d, self.width, self.heads, self.e, self.T = n, d, width, heads, e, T
        self.time_embed = nn.Embedding(T + 1, e)
        with torch.no_grad():
            self.time_embed.weight.copy_(sinusoidal_table(T, e))
        self.in_proj = nn.Linear(n + d + e, width)
        self.layers = nn.ModuleList(GraphAttentionLayer(width, heads) for _ in range(NUM_LAYERS))
        self.norm_out = nn.LayerNorm(width)
        self.head = nn.Linear(width, n)

    def dims(self) -> dict:
        return dict(n=self.n, d=self.d, width=self.width, heads=self.heads, e=self.e, T=self.T)

    def embed_timestep(self, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if bool(((t < 0) | (t > self.T)).any()):
            raise ValueError(f"timestep outside [0, {self.T}]")
        return self.time_embed(t)

    def forward(self, batch: GraphBatch) -> torch.Tensor:
        if batch.h.shape[1] != self.d:
            raise ValueError(f"feature dim {batch.h.shape[1]} != model feature dim {self.d}")
        if batch.x.shape[1] != self.n:
            raise ValueError(f"position dim {batch.x.shape[1]} != model position dim {self.n}")
        temb = self.embed_timestep(batch.node_timesteps())
        z = self.in_proj(torch.cat([batch.x, batch.h, temb], dim=1))
        mask = batch.attention_mask()
        for layer in self.layers:
            z = layer(z, mask)
        return self.head(self.norm_out(z))


def init_params(seed: int, width: int = 128, heads: int = 4, e: int = 32, d: int = 64, n: int = 2,
                T: int = 300) -> GraphDenoiser:
    """Build a denoiser whose weights depend only on ``seed``."""
    if width % heads:
        raise ValueError(f"width {width} not divisible by heads {heads}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return GraphDenoiser(n=n, d=d, width=width, heads=heads, e=e, T=T)


def denoise(model: GraphDenoiser, batch: GraphBatch) -> torch.Tensor:
    return model(batch)


def loss_and_gradients(model: nn.Module, batch: GraphBatch, eps: torch.Tensor):
    """Noise-prediction MSE and its gradient for every named parameter.

    Gradients are returned as a fresh dict; ``.grad`` slots are left clean.
    """
    model.zero_grad(set_to_none=True)
    eps_hat = model(batch)
    if eps_hat.shape != eps.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != prediction {tuple(eps_hat.shape)}")
    loss = F.mse_loss(eps_hat, eps.to(eps_hat.dtype))
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss.item()}")
    names, params = zip(*[(k, p) for k, p in model.named_parameters() if p.requires_grad])
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = {}
    for name, p, g in zip(names, params, grads):
        out[name] = torch.zeros_like(p) if g is None else g
    return loss.item(), out


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def as_numpy_fn(model: GraphDenoiser, features: torch.Tensor, graph_index: torch.Tensor):
    """Adapt a denoiser to the ``(x_t, t, H) -> eps_hat`` numpy callable contract."""
    dtype = next(model.parameters()).dtype
    num_graphs = int(graph_index.max()) + 1

    def fn(x_t: np.ndarray, t: int, H=None) -> np.ndarray:
        batch = GraphBatch(
            features,
            torch.as_tensor(x_t, dtype=dtype),
            torch.full((num_graphs,), int(t), dtype=torch.long),
            graph_index,
        )
        with torch.no_grad():
            return model(batch).double().numpy()

    return fn

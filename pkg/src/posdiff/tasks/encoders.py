"""Small trainable feature encoders for patches and token elements."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from posdiff.tasks.instances import PATCH_SIZE


class PatchEncoder(nn.Module):
    """Three stride-2 conv stages, 2x2 average pool, linear projection to ``d``."""

    def __init__(self, d: int = 64, channels: Sequence[int] = (16, 32, 64), in_channels: int = 3):
        super().__init__()
        self.d = d
        self.in_channels = in_channels
        self.channels = tuple(channels)
        layers = []
        c_prev = in_channels
        for c in channels:
            layers += [nn.Conv2d(c_prev, c, 3, stride=2, padding=1), nn.ReLU()]
            c_prev = c
        self.convs = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(2)
        self.proj = nn.Linear(4 * c_prev, d)

    def config(self) -> dict:
        return {"kind": "patch", "d": self.d, "channels": list(self.channels), "in_channels": self.in_channels}

    def forward(self, patches) -> torch.Tensor:
        """``patches``: (N, 32, 32, C) floats in [0, 1] or uint8 in [0, 255]."""
        x = torch.as_tensor(patches)
        x = x.to(self.proj.weight.dtype) / 255.0 if x.dtype == torch.uint8 else x.to(self.proj.weight.dtype)
        if x.ndim != 4 or x.shape[1:3] != (PATCH_SIZE, PATCH_SIZE) or x.shape[3] != self.in_channels:
            raise ValueError(
                f"expected patches shaped (N, {PATCH_SIZE}, {PATCH_SIZE}, {self.in_channels}), got {tuple(x.shape)}"
            )
        x = x.permute(0, 3, 1, 2) - 0.5
        x = self.pool(self.convs(x))
        return self.proj(x.flatten(1))


def pad_tokens(elements: Sequence[np.ndarray], pad: int = -1) -> torch.Tensor:
    """Stack variable-length token arrays into an (N, L) tensor padded with ``pad``."""
    L = max(len(e) for e in elements)
    out = np.full((len(elements), L), pad, dtype=np.int64)
    for i, e in enumerate(elements):
        if len(e) == 0:
            raise ValueError("empty element")
        out[i, : len(e)] = e
    return torch.from_numpy(out)


class SequenceEncoder(nn.Module):
    """Token embeddings pooled with per-position gates.

    ``h = mean_j emb(tok_j) * (1 + gate_j)`` with ``gate_0`` pinned to zero, so a
    one-token element encodes to its embedding while token order still matters.
    """

    def __init__(self, vocab: int, d: int = 64, max_len: int = 16):
        super().__init__()
        self.vocab, self.d, self.max_len = vocab, d, max_len
        self.embed = nn.Embedding(vocab, d)
        self.gate = nn.Parameter(0.5 * torch.randn(max_len - 1, d))

    def config(self) -> dict:
        return {"kind": "sequence", "vocab": self.vocab, "d": self.d, "max_len": self.max_len}

    def forward(self, tokens) -> torch.Tensor:
        """``tokens``: list of int arrays or an (N, L) tensor padded with -1."""
        if not isinstance(tokens, torch.Tensor):
            tokens = pad_tokens(tokens)
        if tokens.shape[1] > self.max_len:
            raise ValueError(f"element length {tokens.shape[1]} exceeds max_len {self.max_len}")
        valid = tokens >= 0
        if bool((tokens >= self.vocab).any()) or bool((tokens < -1).any()):
            raise ValueError(f"token id outside vocabulary [0, {self.vocab})")
        emb = self.embed(tokens.clamp(min=0))
        gates = torch.cat([torch.zeros(1, self.d, dtype=self.gate.dtype), self.gate])[: tokens.shape[1]]
        weighted = emb * (1.0 + gates) * valid[..., None]
        return weighted.sum(1) / valid.sum(1, keepdim=True)


def build_encoder(cfg: dict) -> nn.Module:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "patch":
        return PatchEncoder(**cfg)
    if kind == "sequence":
        return SequenceEncoder(**cfg)
    raise ValueError(f"unknown encoder kind {kind!r}")


def encode_patch(encoder: PatchEncoder, patch) -> torch.Tensor:
    """Feature vector (d,) for one (32, 32, 3) patch, uint8 or floats in [0, 1]."""
    arr = torch.as_tensor(np.asarray(patch))
    if arr.ndim != 3:
        raise ValueError(f"expected one (32, 32, 3) patch, got shape {tuple(arr.shape)}")
    return encoder(arr[None])[0]


def encode_sequence_element(encoder: SequenceEncoder, tokens) -> torch.Tensor:
    """Feature vector (d,) for one element given as an ordered token-id array."""
    return encoder([np.asarray(tokens, dtype=np.int64)])[0]

"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PDCKPT1\\n"
    u32 header length, header as sorted-key JSON (utf-8)
    u32 array count
    per array: u16 name length, name (utf-8), u8 ndim, ndim x u32 dims,
               prod(dims) float32 values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from posdiff.model import OrderingModel

MAGIC = b"PDCKPT1\n"


class CheckpointError(ValueError):
    pass


class CheckpointMismatchError(CheckpointError):
    """The checkpoint is valid but was trained for a different task or dimension."""


def encode(arrays: dict, meta: dict) -> bytes:
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        if isinstance(arr, torch.Tensor):
            arr = arr.detach().cpu().numpy()
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d shapes
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple:
    """Inverse of :func:`encode`; returns ``(arrays, meta)``."""
    view = memoryview(blob)
    pos = 0

    def take(nbytes: int) -> memoryview:
        nonlocal pos
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated checkpoint: need {nbytes} bytes at offset {pos}")
        chunk = view[pos:pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("bad magic: not a PDCKPT1 checkpoint (or unsupported version)")
    (hlen,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(bytes(take(hlen)).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after the last array")
    return arrays, meta


def save_checkpoint(model, meta: dict, path, optimizer: Optional[torch.optim.Optimizer] = None) -> Path:
    """Write model weights (and optionally Adam moments) with ``meta``."""
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    meta = dict(meta)
    meta["model"] = model.config()
    if optimizer is not None:
        names = {id(p): k for k, p in model.named_parameters()}
        steps = set()
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                steps.add(int(state["step"]))
                for key in ("exp_avg", "exp_avg_sq"):
                    arrays[f"optim.{names[id(p)]}.{key}"] = state[key]
        meta["optimizer_step"] = max(steps) if steps else 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(arrays, meta))
    return path


def load_checkpoint(path, task: Optional[str] = None, n: Optional[int] = None):
    """Rebuild the model from a checkpoint; returns ``(model, meta, arrays)``.

    ``task`` / ``n`` assert what the caller expects to get back.
    """
    blob = Path(path).read_bytes()
    arrays, meta = decode(blob)
    if "model" not in meta:
        raise CheckpointError("checkpoint header lacks a model description")
    ckpt_n = meta["model"]["denoiser"]["n"]
    if n is not None and ckpt_n != n:
        raise CheckpointMismatchError(f"dimension mismatch: checkpoint has position dim n={ckpt_n}, expected n={n}")
    if task is not None and meta["model"]["task"] != task:
        raise CheckpointMismatchError(
            f"task mismatch: checkpoint was trained for {meta['model']['task']!r} (n={ckpt_n}), not {task!r}"
        )
    model = OrderingModel.from_config(meta["model"])
    state = {k[len("model."):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model.")}
    expected = model.state_dict()
    for k, v in state.items():
        if k not in expected or tuple(expected[k].shape) != tuple(v.shape):
            raise CheckpointError(f"array {k!r} does not fit the described model")
    model.load_state_dict(state, strict=True)
    return model, meta, arrays


def restore_optimizer(model, optimizer: torch.optim.Optimizer, arrays: dict, step: int) -> None:
    """Put saved Adam moments back into ``optimizer``."""
    for name, p in model.named_parameters():
        m = arrays.get(f"optim.{name}.exp_avg")
        if m is None:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(m.copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"optim.{name}.exp_avg_sq"].copy()),
        }

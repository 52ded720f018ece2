"""Puzzle and sequence task instances, patch extraction and shuffling."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from posdiff.tasks.grid import make_grid, sequence_positions

PATCH_SIZE = 32


@dataclass
class PuzzleInstance:
    """Patches in presentation order.

    ``gt_cell[k]`` is the true grid cell of presented patch ``k`` and
    ``shuffle_perm[k]`` the row-major index it had before shuffling.
    """

    patches: np.ndarray  # (K, 32, 32, C) float32 in [0, 1]
    n: int
    gt_cell: np.ndarray
    shuffle_perm: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        K = self.n * self.n
        if len(self.patches) != K:
            raise ValueError(f"{len(self.patches)} patches for a {self.n}x{self.n} grid")
        _check_bijection(self.gt_cell, K, "gt_cell")
        _check_bijection(self.shuffle_perm, K, "shuffle_perm")

    @property
    def K(self) -> int:
        return len(self.patches)

    def positions(self) -> np.ndarray:
        return make_grid(self.n).centers[self.gt_cell]


@dataclass
class SequenceInstance:
    """Elements in presentation order; ``gt_rank[k]`` is element k's true rank."""

    elements: list
    gt_rank: np.ndarray
    shuffle_perm: np.ndarray
    seq_id: str = ""

    def __post_init__(self):
        K = len(self.elements)
        if K < 1:
            raise ValueError("sequence instance needs at least one element")
        _check_bijection(self.gt_rank, K, "gt_rank")
        _check_bijection(self.shuffle_perm, K, "shuffle_perm")

    @property
    def K(self) -> int:
        return len(self.elements)

    def positions(self) -> np.ndarray:
        return sequence_positions(self.K)[self.gt_rank][:, None]


Instance = Union[PuzzleInstance, SequenceInstance]


def _check_bijection(a: np.ndarray, K: int, name: str) -> None:
    a = np.asarray(a)
    if a.shape != (K,) or not np.array_equal(np.sort(a), np.arange(K)):
        raise ValueError(f"{name} is not a permutation of range({K})")


def resize_bilinear(patch: np.ndarray, size: int = PATCH_SIZE) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an (h, w, C) array to (size, size, C)."""
    if patch.shape[0] == size and patch.shape[1] == size:
        return patch.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(patch, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


def patchify(image: np.ndarray, n: int, size: int = PATCH_SIZE) -> np.ndarray:
    """Cut an (H, W[, C]) image into n*n row-major tiles resized to ``size``."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected an (H, W, C) image, got shape {image.shape}")
    H, W = image.shape[:2]
    if int(n) != n or n < 1:
        raise ValueError(f"grid side must be a positive integer, got {n}")
    if H < n or W < n:
        raise ValueError(f"{H}x{W} image is smaller than a {n}x{n} grid")
    rows = [i * H // n for i in range(n + 1)]
    cols = [j * W // n for j in range(n + 1)]
    patches = [
        resize_bilinear(image[rows[i]:rows[i + 1], cols[j]:cols[j + 1]], size)
        for i in range(n)
        for j in range(n)
    ]
    return np.stack(patches)


def puzzle_from_image(image: np.ndarray, n: int, image_id: str = "") -> PuzzleInstance:
    """Unshuffled puzzle: patch k belongs to cell k."""
    K = n * n
    return PuzzleInstance(patchify(image, n), n, np.arange(K), np.arange(K), image_id)


def sequence_from_elements(elements, seq_id: str = "") -> SequenceInstance:
    """Unshuffled sequence from elements listed in their true order."""
    K = len(elements)
    return SequenceInstance([np.asarray(e, dtype=np.int64) for e in elements], np.arange(K), np.arange(K), seq_id)


def shuffle_instance(instance: Instance, seed) -> Instance:
    """Present the elements in a seed-determined random order.

    The ground truth travels with the elements, so the task itself is
    unchanged; ``shuffle_perm`` keeps pointing at the original indices.
    """
    perm = np.random.default_rng(seed).permutation(instance.K)
    if isinstance(instance, PuzzleInstance):
        return replace(
            instance,
            patches=instance.patches[perm],
            gt_cell=instance.gt_cell[perm],
            shuffle_perm=instance.shuffle_perm[perm],
        )
    return replace(
        instance,
        elements=[instance.elements[i] for i in perm],
        gt_rank=instance.gt_rank[perm],
        shuffle_perm=instance.shuffle_perm[perm],
    )

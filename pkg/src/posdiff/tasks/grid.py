"""Ground-truth slot layouts in the unit box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    n: int
    centers: np.ndarray  # (n*n, 2), row-major cells, columns = (x, y)

    @property
    def num_cells(self) -> int:
        return self.n * self.n

    @property
    def spacing(self) -> float:
        return 2.0 / self.n


def make_grid(n: int) -> GridSpec:
    """Centers of an ``n x n`` partition of ``[-1, 1]^2``.

    Cell ``i * n + j`` (row ``i``, column ``j``) sits at
    ``(-1 + (2j + 1)/n, -1 + (2i + 1)/n)``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"grid side must be a positive integer, got {n}")
    n = int(n)
    ticks = -1.0 + (2.0 * np.arange(n) + 1.0) / n
    ys, xs = np.meshgrid(ticks, ticks, indexing="ij")
    centers = np.stack([xs.ravel(), ys.ravel()], axis=1)
    centers.setflags(write=False)
    return GridSpec(n, centers)


def sequence_positions(K: int) -> np.ndarray:
    """``K`` evenly spaced centers in ``(-1, 1)``; rank 0 gets the smallest."""
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    K = int(K)
    return -1.0 + (2.0 * np.arange(K) + 1.0) / K

"""Turn continuous predicted positions into discrete slots."""

from __future__ import annotations

import numpy as np

from posdiff.tasks.grid import GridSpec


def greedy_assign(pred: np.ndarray, grid: GridSpec | np.ndarray) -> np.ndarray:
    """Injective element -> slot map, committing the globally closest pair first.

    ``grid`` is a :class:`GridSpec` or any ``(C, dim)`` array of slot centers.
    Distances are plain Euclidean; equal distances resolve by (element, slot)
    index order. Returns an int array with one slot index per element.
    """
    centers = grid.centers if isinstance(grid, GridSpec) else np.asarray(grid, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if centers.ndim == 1:
        centers = centers[:, None]
    K, C = len(pred), len(centers)
    if K > C:
        raise ValueError(f"{K} elements cannot be placed injectively into {C} slots")
    if not np.isfinite(pred).all():
        raise ValueError("predicted positions must be finite")

    dist = np.sqrt(((pred[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
    elems, slots = np.divmod(np.arange(K * C), C)
    order = np.lexsort((slots, elems, dist.ravel()))

    out = np.full(K, -1, dtype=np.int64)
    taken = np.zeros(C, dtype=bool)
    remaining = K
    for idx in order:
        e, s = elems[idx], slots[idx]
        if out[e] >= 0 or taken[s]:
            continue
        out[e] = s
        taken[s] = True
        remaining -= 1
        if remaining == 0:
            break
    return out


def order_from_positions(pred: np.ndarray) -> np.ndarray:
    """Rank of each element by ascending position; ties keep input order."""
    pred = np.asarray(pred, dtype=np.float64).reshape(len(pred), -1)
    if pred.shape[1] != 1:
        raise ValueError("order_from_positions expects scalar positions")
    pred = pred[:, 0]
    if len(pred) < 1:
        raise ValueError("need at least one position")
    if not np.isfinite(pred).all():
        raise ValueError("predicted positions must be finite")
    order = np.argsort(pred, kind="stable")
    ranks = np.empty(len(pred), dtype=np.int64)
    ranks[order] = np.arange(len(pred))
    return ranks

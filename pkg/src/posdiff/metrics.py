"""Ordering metrics for puzzles (cell assignments) and sequences (ranks).

Rank arguments are integer arrays where ``rank[k]`` is the slot of element
``k``. A "pair" argument is ``(predicted, ground_truth)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from math import comb, fsum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

Pair = tuple


def _as_pairs(pairs: Iterable[Pair]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for pred, gt in pairs:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape or pred.ndim != 1:
            raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
        out.append((pred, gt))
    if not out:
        raise ValueError("metrics need at least one instance")
    return out


def direct_comparison(assignments: Iterable[Pair]) -> float:
    """Percentage of correctly placed pieces, pooled over every instance."""
    pairs = _as_pairs(assignments)
    correct = sum(int((p == g).sum()) for p, g in pairs)
    total = sum(len(g) for _, g in pairs)
    if total == 0:
        raise ValueError("no pieces to compare")
    return 100.0 * correct / total


def solved_rate(assignments: Iterable[Pair]) -> float:
    """Percentage of instances with every piece in place."""
    pairs = _as_pairs(assignments)
    return 100.0 * sum(bool(np.array_equal(p, g)) for p, g in pairs) / len(pairs)


def accuracy(rankings: Iterable[Pair]) -> float:
    """Per-instance fraction of correct positions, averaged over instances, in percent."""
    pairs = _as_pairs(rankings)
    if any(len(g) == 0 for _, g in pairs):
        raise ValueError("empty ranking")
    return 100.0 * fsum(float(np.mean(p == g)) for p, g in pairs) / len(pairs)


def pmr(rankings: Iterable[Pair]) -> float:
    """Perfect match ratio in percent."""
    return solved_rate(rankings)


def _check_ranks(pred_rank, gt_rank, min_k: int = 2):
    pred_rank = np.asarray(pred_rank, dtype=np.float64)
    gt_rank = np.asarray(gt_rank, dtype=np.float64)
    if pred_rank.shape != gt_rank.shape or pred_rank.ndim != 1:
        raise ValueError(f"rank shapes differ: {pred_rank.shape} vs {gt_rank.shape}")
    if len(gt_rank) < min_k:
        raise ValueError(f"need at least {min_k} elements, got {len(gt_rank)}")
    return pred_rank, gt_rank


def _pair_signs(pred_rank, gt_rank):
    iu = np.triu_indices(len(gt_rank), k=1)
    sp = np.sign(pred_rank[:, None] - pred_rank[None, :])[iu]
    sg = np.sign(gt_rank[:, None] - gt_rank[None, :])[iu]
    return sp, sg


def inversions(pred_rank, gt_rank) -> int:
    """Number of element pairs ordered differently by prediction and truth."""
    pred_rank, gt_rank = _check_ranks(pred_rank, gt_rank, min_k=1)
    sp, sg = _pair_signs(pred_rank, gt_rank)
    return int((sp * sg < 0).sum())


def kendall_tau(pred_rank, gt_rank) -> float:
    """``1 - 2 * inversions / C(K, 2)``."""
    pred_rank, gt_rank = _check_ranks(pred_rank, gt_rank)
    return 1.0 - 2.0 * inversions(pred_rank, gt_rank) / comb(len(gt_rank), 2)


def pairwise_accuracy(pred_rank, gt_rank) -> float:
    """Fraction of element pairs whose relative order is predicted correctly.

    Computed as ``(tau + 1) / 2`` so the identity with Kendall's tau holds
    bit-for-bit; for rankings without ties this is concordant / C(K, 2).
    """
    return (kendall_tau(pred_rank, gt_rank) + 1.0) / 2.0


def spearman(pred_rank, gt_rank) -> float:
    """Spearman's rho; tied values get average ranks."""
    pred_rank, gt_rank = _check_ranks(pred_rank, gt_rank)
    rp, rg = rankdata(pred_rank), rankdata(gt_rank)
    K = len(rp)
    if len(np.unique(rp)) == K and len(np.unique(rg)) == K:
        d = rp - rg
        return float(1.0 - 6.0 * (d @ d) / (K * (K * K - 1)))
    rp, rg = rp - rp.mean(), rg - rg.mean()
    denom = np.sqrt((rp @ rp) * (rg @ rg))
    if denom == 0:
        raise ValueError("Spearman correlation undefined for constant rankings")
    return float((rp @ rg) / denom)


def average_distance(pred_rank, gt_rank) -> float:
    """Mean absolute displacement between predicted and true rank."""
    pred_rank, gt_rank = _check_ranks(pred_rank, gt_rank, min_k=1)
    return float(np.abs(pred_rank - gt_rank).mean())


def _mean_over(pairs, fn) -> float:
    # fsum is exactly rounded, so the mean does not depend on instance order
    return fsum(fn(p, g) for p, g in pairs) / len(pairs)


@dataclass
class MetricsReport:
    direct_comparison: float
    solved_rate: float
    accuracy: float
    pmr: float
    kendall_tau: Optional[float]
    spearman: Optional[float]
    pairwise_accuracy: Optional[float]
    average_distance: Optional[float]
    instances: int
    elements: int

    def to_text(self) -> str:
        """``key: value`` lines in field order, floats to four decimals."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name}: {v}" if isinstance(v, int) else f"{f.name}: {v:.4f}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {f.name: None for f in fields(cls)}
        for line in text.strip().splitlines():
            key, _, raw = line.partition(":")
            key = key.strip()
            if key not in values:
                raise ValueError(f"unknown metrics key {key!r}")
            values[key] = int(raw) if key in ("instances", "elements") else float(raw)
        return cls(**values)


def report(pairs: Sequence[Pair], ranked: bool = True) -> MetricsReport:
    """Aggregate every applicable metric.

    Rank correlations need a linear order, so they are only filled in for
    ``ranked`` tasks (sequences); instances with a single element are skipped
    for them since pair metrics are undefined there.
    """
    pairs = _as_pairs(pairs)
    multi = [(p, g) for p, g in pairs if len(g) >= 2]
    rank_fields = dict(kendall_tau=None, spearman=None, pairwise_accuracy=None, average_distance=None)
    if ranked and multi:
        rank_fields = dict(
            kendall_tau=_mean_over(multi, kendall_tau),
            spearman=_mean_over(multi, spearman),
            pairwise_accuracy=_mean_over(multi, pairwise_accuracy),
            average_distance=_mean_over(pairs, average_distance),
        )
    return MetricsReport(
        direct_comparison=direct_comparison(pairs),
        solved_rate=solved_rate(pairs),
        accuracy=accuracy(pairs),
        pmr=pmr(pairs),
        instances=len(pairs),
        elements=sum(len(g) for _, g in pairs),
        **rank_fields,
    )

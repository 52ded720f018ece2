"""scikit-learn style wrappers around training and sampling.

>>> solver = PuzzleSolver(puzzle_sizes=(3,), epochs=1).fit(images)  # doctest: +SKIP
>>> cells = solver.predict(shuffled_patch_sets)                      # doctest: +SKIP
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from posdiff.checkpoint import load_checkpoint, save_checkpoint
from posdiff.diffusion import STANDARD_GAUSSIAN, ZERO_CENTERED
from posdiff.tasks.decode import greedy_assign, order_from_positions
from posdiff.tasks.grid import make_grid
from posdiff.tasks.instances import (
    PATCH_SIZE,
    PuzzleInstance,
    SequenceInstance,
    puzzle_from_image,
    sequence_from_elements,
    shuffle_instance,
)
from posdiff.training import TrainConfig, checkpoint_meta, evaluate, predict_positions, train


def check_images(X) -> list:
    """Validate a collection of (H, W[, C]) images; returns float32 RGB arrays in [0, 1]."""
    if X is None or len(X) == 0:
        raise ValueError("expected at least one image")
    out = []
    for i, img in enumerate(X):
        arr = np.asarray(img)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image {i} has shape {arr.shape}; expected (H, W, 3)")
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float32) / 255.0
        arr = arr.astype(np.float32)
        if not np.isfinite(arr).all() or arr.min() < 0 or arr.max() > 1:
            raise ValueError(f"image {i} must be uint8 or floats in [0, 1]")
        out.append(arr)
    return out


def check_patch_sets(X) -> list:
    """Validate shuffled patch sets of shape (K, 32, 32, 3) with K a perfect square."""
    if X is None or len(X) == 0:
        raise ValueError("expected at least one patch set")
    out = []
    for i, patches in enumerate(X):
        arr = np.asarray(patches)
        K = len(arr)
        n = math.isqrt(K)
        if n * n != K or K == 0:
            raise ValueError(f"patch set {i} has {K} patches, not a square number")
        if arr.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
            raise ValueError(f"patch set {i} has patch shape {arr.shape[1:]}")
        out.append(arr)
    return out


def check_sequences(X, vocab: Optional[int] = None) -> list:
    """Validate sequences given as lists of non-empty integer token arrays."""
    if X is None or len(X) == 0:
        raise ValueError("expected at least one sequence")
    out = []
    for i, seq in enumerate(X):
        elements = [np.asarray(el, dtype=np.int64) for el in seq]
        if len(elements) < 1 or any(el.ndim != 1 or len(el) == 0 for el in elements):
            raise ValueError(f"sequence {i} must be a non-empty list of non-empty token arrays")
        if vocab is not None and any(el.min() < 0 or el.max() >= vocab for el in elements):
            raise ValueError(f"sequence {i} has token ids outside [0, {vocab})")
        out.append(elements)
    return out


class _DiffusionOrderer(BaseEstimator):
    _task = ""

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            task=self._task, T=self.T, inference_ratio=self.inference_ratio, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, grad_clip=self.grad_clip, seed=self.seed,
            init_mode=self.init_mode, width=self.width, heads=self.heads, e=self.e, d=self.d,
            max_steps=self.max_steps, **self._extra_config(),
        )

    def _extra_config(self) -> dict:
        return {}

    def _sampling_rng(self):
        if self.init_mode == STANDARD_GAUSSIAN:
            return np.random.default_rng([self.seed, 3])
        return None

    def _fit_instances(self, instances):
        cfg = self._train_config()
        result = train(cfg, instances, time_budget=self.time_budget)
        self.model_ = result.model
        self.n_steps_ = result.step
        self.loss_curve_ = result.losses
        self.train_time_ = result.wall_time
        return self

    def _positions(self, instances):
        check_is_fitted(self, "model_")
        cfg = self._train_config().diffusion(self.init_mode)
        return predict_positions(self.model_, instances, cfg, self._sampling_rng())

    def save(self, path):
        check_is_fitted(self, "model_")
        meta = checkpoint_meta(self._train_config(), self.n_steps_, self.train_time_,
                               {"estimator": type(self).__name__, "params": _jsonable(self.get_params())})
        return save_checkpoint(self.model_, meta, path)

    @classmethod
    def load(cls, path):
        model, meta, _ = load_checkpoint(path, task=cls._task)
        params = meta.get("params") or {}
        est = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
        est.model_ = model
        est.n_steps_ = int(meta.get("step", 0))
        est.train_time_ = float(meta.get("wall_time", 0.0))
        est.loss_curve_ = []
        return est


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


class PuzzleSolver(_DiffusionOrderer):
    """Learns to place shuffled square patches back on their grid.

    ``fit`` takes whole images and cuts them into every size in
    ``puzzle_sizes``; ``predict`` takes shuffled patch sets and returns the
    row-major cell index of each patch.
    """

    _task = "puzzle"

    def __init__(self, puzzle_sizes=(3, 4), T=300, inference_ratio=10, init_mode=ZERO_CENTERED,
                 width=128, heads=4, e=32, d=64, epochs=10, batch_size=32, lr=1e-3, grad_clip=1.0,
                 seed=0, max_steps=None, time_budget=None):
        self.puzzle_sizes = puzzle_sizes
        self.T = T
        self.inference_ratio = inference_ratio
        self.init_mode = init_mode
        self.width = width
        self.heads = heads
        self.e = e
        self.d = d
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.seed = seed
        self.max_steps = max_steps
        self.time_budget = time_budget

    def _extra_config(self) -> dict:
        return {"puzzle_sizes": tuple(self.puzzle_sizes)}

    def _make_instances(self, images) -> list:
        out = []
        for i, img in enumerate(check_images(images)):
            for n in self.puzzle_sizes:
                out.append(shuffle_instance(puzzle_from_image(img, n, str(i)), [self.seed, i, n]))
        return out

    def fit(self, X, y=None):
        return self._fit_instances(self._make_instances(X))

    def _as_instances(self, X) -> list:
        out = []
        for patches in check_patch_sets(X):
            n = math.isqrt(len(patches))
            out.append(PuzzleInstance(patches, n, np.arange(n * n), np.arange(n * n)))
        return out

    def predict_positions(self, X) -> list:
        """Continuous 2-D position of every patch, one (K, 2) array per set."""
        return self._positions(self._as_instances(X))

    def predict(self, X) -> list:
        return [greedy_assign(pos, make_grid(math.isqrt(len(pos)))) for pos in self.predict_positions(X)]

    def score(self, X, y=None) -> float:
        """Fraction of correctly placed patches over shuffled puzzles cut from ``X``."""
        check_is_fitted(self, "model_")
        cfg = self._train_config().diffusion(self.init_mode)
        rep, _ = evaluate(self.model_, self._make_instances(X), cfg, self._sampling_rng())
        return rep.direct_comparison / 100.0


class SequenceOrderer(_DiffusionOrderer):
    """Learns to order shuffled token-array elements.

    ``fit`` takes sequences whose elements are listed in their true order;
    ``predict`` takes shuffled element lists and returns each element's rank.
    """

    _task = "sequence"

    def __init__(self, vocab=512, T=300, inference_ratio=10, init_mode=ZERO_CENTERED, width=128, heads=4,
                 e=32, d=64, epochs=10, batch_size=32, lr=1e-3, grad_clip=1.0, seed=0, max_steps=None,
                 time_budget=None):
        self.vocab = vocab
        self.T = T
        self.inference_ratio = inference_ratio
        self.init_mode = init_mode
        self.width = width
        self.heads = heads
        self.e = e
        self.d = d
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.seed = seed
        self.max_steps = max_steps
        self.time_budget = time_budget

    def _extra_config(self) -> dict:
        return {"vocab": self.vocab}

    def _make_instances(self, sequences) -> list:
        return [
            shuffle_instance(sequence_from_elements(seq, str(i)), [self.seed, i])
            for i, seq in enumerate(check_sequences(sequences, self.vocab))
        ]

    def fit(self, X, y=None):
        return self._fit_instances(self._make_instances(X))

    def predict_positions(self, X) -> list:
        insts = [SequenceInstance(seq, np.arange(len(seq)), np.arange(len(seq)))
                 for seq in check_sequences(X, self.vocab)]
        return self._positions(insts)

    def predict(self, X) -> list:
        return [order_from_positions(pos) for pos in self.predict_positions(X)]

    def score(self, X, y=None) -> float:
        """Mean per-sequence fraction of correctly ranked elements."""
        check_is_fitted(self, "model_")
        cfg = self._train_config().diffusion(self.init_mode)
        rep, _ = evaluate(self.model_, self._make_instances(X), cfg, self._sampling_rng())
        return rep.accuracy / 100.0


__all__ = ["PuzzleSolver", "SequenceOrderer", "check_images", "check_patch_sets", "check_sequences"]

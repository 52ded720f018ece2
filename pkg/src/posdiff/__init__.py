"""Diffusion-based ordering of unordered sets (puzzle patches, sequence elements)."""

from posdiff.diffusion import (
    DiffusionConfig,
    NoiseSchedule,
    build_linear_schedule,
    ddim_step,
    forward_sample,
    reverse_process,
    simple_loss,
    timestep_subsequence,
)
from posdiff.estimators import PuzzleSolver, SequenceOrderer

__version__ = "0.1.0"

__all__ = [
    "DiffusionConfig",
    "NoiseSchedule",
    "PuzzleSolver",
    "SequenceOrderer",
    "build_linear_schedule",
    "ddim_step",
    "forward_sample",
    "reverse_process",
    "simple_loss",
    "timestep_subsequence",
]

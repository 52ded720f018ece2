from posdiff.tasks.decode import greedy_assign, order_from_positions
from posdiff.tasks.encoders import (
    PatchEncoder,
    SequenceEncoder,
    build_encoder,
    encode_patch,
    encode_sequence_element,
    pad_tokens,
)
from posdiff.tasks.grid import GridSpec, make_grid, sequence_positions
from posdiff.tasks.instances import (
    PATCH_SIZE,
    PuzzleInstance,
    SequenceInstance,
    patchify,
    puzzle_from_image,
    resize_bilinear,
    sequence_from_elements,
    shuffle_instance,
)

__all__ = [
    "GridSpec",
    "PATCH_SIZE",
    "PatchEncoder",
    "PuzzleInstance",
    "SequenceEncoder",
    "SequenceInstance",
    "build_encoder",
    "encode_patch",
    "encode_sequence_element",
    "greedy_assign",
    "make_grid",
    "order_from_positions",
    "pad_tokens",
    "patchify",
    "puzzle_from_image",
    "resize_bilinear",
    "sequence_from_elements",
    "sequence_positions",
    "shuffle_instance",
]

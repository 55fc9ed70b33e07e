"""Multi-task few-shot learning: supervised training with rotation and BYOL
auxiliary tasks, plus episodic N-way K-shot evaluation of frozen embeddings.

The heavy lifting lives in the C++ extension ``fsmt._core``; this package
re-exports its operations.
"""

from fsmt._core import (
    __version__,
    augment,
    encode,
    evaluate_checkpoint,
    forward_op,
    generate_toy_corpus,
    ingest,
    inspect_checkpoint,
    rotate90,
    sample_rotations,
    train_run,
)

__all__ = [
    "__version__",
    "augment",
    "encode",
    "evaluate_checkpoint",
    "forward_op",
    "generate_toy_corpus",
    "ingest",
    "inspect_checkpoint",
    "rotate90",
    "sample_rotations",
    "train_run",
]

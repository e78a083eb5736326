# =============================================================================
# MPEMBED - SPARSE OPTIMIZERS
# =============================================================================
# Gradient application on fetched FP32 rows, written back through update().
#
# FORMULAS (row i, gradient g, learning rate eta):
# - dedup:    g_i = SUM of every contribution to row i (FP64, rounded once)
# - SGD:      x <- x - eta * g
# - AdaGrad:  m_i <- m_i + mean(g^2)
#             x   <- x - eta * g / (sqrt(m_i) + eps)
#
# Rows are processed in ascending index order.
# =============================================================================

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .mp_table import MixedPrecisionEmbedding


@dataclass
class GradientBatch:
    """Per-row gradients of one iteration; may contain repeated indices."""
    indices: np.ndarray  # (m,) int64
    grads: np.ndarray  # (m, d) float32
    learning_rate: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.grads = np.asarray(self.grads, dtype=np.float32)
        if self.grads.ndim != 2 or self.grads.shape[0] != self.indices.size:
            raise ValueError(
                f"grads must be ({self.indices.size}, d), got {self.grads.shape}"
            )
        if not np.all(np.isfinite(self.grads)):
            raise ValueError("Gradient batch contains non-finite values")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def from_entries(
        cls,
        entries: Iterable[Tuple[int, np.ndarray]],
        learning_rate: float,
        dim: Optional[int] = None,
    ) -> "GradientBatch":
        entries = list(entries)
        if not entries:
            width = dim if dim is not None else 0
            return cls(np.zeros(0, dtype=np.int64), np.zeros((0, width), dtype=np.float32), learning_rate)
        indices = np.array([i for i, _ in entries], dtype=np.int64)
        grads = np.stack([np.asarray(g, dtype=np.float32) for _, g in entries])
        return cls(indices, grads, learning_rate)

    @property
    def dim(self) -> int:
        return int(self.grads.shape[1])

    @property
    def entries(self) -> List[Tuple[int, np.ndarray]]:
        return [(int(i), g) for i, g in zip(self.indices, self.grads)]

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass
class RowWiseAdagradState:
    """One accumulated squared-gradient scalar per table row."""
    momentum: np.ndarray  # (N,) float32
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, num_rows: int, epsilon: float = 1e-8) -> "RowWiseAdagradState":
        return cls(np.zeros(num_rows, dtype=np.float32), epsilon)


def dedup(batch: GradientBatch) -> GradientBatch:
    """
    Merge repeated rows: one entry per index, ascending, gradients summed.

    Contributions are summed in a canonical order in FP64 and rounded once,
    so any permutation of the same entries gives bit-identical output.
    """
    if not len(batch):
        return GradientBatch(batch.indices.copy(), batch.grads.copy(), batch.learning_rate)
    order = np.lexsort((*batch.grads.T[::-1], batch.indices))
    indices = batch.indices[order]
    unique, inverse = np.unique(indices, return_inverse=True)
    merged = np.zeros((unique.size, batch.dim), dtype=np.float64)
    np.add.at(merged, inverse.reshape(-1), batch.grads[order].astype(np.float64))
    return GradientBatch(unique, merged.astype(np.float32), batch.learning_rate)


def _check_batch(emb: MixedPrecisionEmbedding, batch: GradientBatch) -> None:
    if len(batch) and batch.dim != emb.dim:
        raise ValueError(f"Gradient dim {batch.dim} does not match embedding dim {emb.dim}")
    if np.any(np.diff(batch.indices) <= 0):
        raise ValueError("Gradient batch must be de-duplicated (strictly ascending indices)")


def apply_sgd(emb: MixedPrecisionEmbedding, batch: GradientBatch) -> None:
    """x <- x - eta * g in FP32 for every row of a de-duplicated batch."""
    _check_batch(emb, batch)
    lr = np.float32(batch.learning_rate)
    for i, grad in zip(batch.indices.tolist(), batch.grads):
        x = emb.fetch(i)
        emb.update(i, x - lr * grad)


def apply_rowwise_adagrad(
    emb: MixedPrecisionEmbedding,
    batch: GradientBatch,
    state: RowWiseAdagradState,
) -> None:
    """Row-wise AdaGrad step for every row of a de-duplicated batch."""
    _check_batch(emb, batch)
    if state.momentum.size != emb.num_rows:
        raise ValueError(
            f"AdaGrad state has {state.momentum.size} rows, embedding has {emb.num_rows}"
        )
    lr = np.float32(batch.learning_rate)
    eps = np.float32(state.epsilon)
    for i, grad in zip(batch.indices.tolist(), batch.grads):
        state.momentum[i] += np.mean(grad * grad, dtype=np.float32)
        x = emb.fetch(i)
        momentum = state.momentum[i]
        if momentum > 0:
            x = x - lr * grad / (np.sqrt(momentum) + eps)
        emb.update(i, x)


# =============================================================================
# END OF SPARSE OPTIMIZERS
# =============================================================================

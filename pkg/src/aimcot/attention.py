"""Attention aggregation: cross-attention maps, grid pooling, visual mass.

Turns raw per-layer attention rows into the three quantities the engine
consumes: a text-to-image saliency map over the cell grid, the total
attention mass on visual context at a decoding step, and the step-to-step
shift of that mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, MappingError, ShapeError
from .geometry import GridSpec

_ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class AttentionSnapshot:
    """Current-token attention rows over the context, one row per layer.

    Rows are head-averaged by the backend; each row is a distribution over
    all context positions. ``visual_index_set`` lists the positions holding
    visual tokens (base-image patches and inserted region tokens).
    """

    per_layer: tuple[np.ndarray, ...]
    context_len: int
    visual_index_set: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.per_layer:
            raise ContractError("snapshot needs at least one layer row")
        for row in self.per_layer:
            if row.shape != (self.context_len,):
                raise ContractError(
                    f"attention row of length {row.shape} for context length {self.context_len}"
                )
            if (row < 0).any():
                raise ContractError("attention rows must be non-negative")
            if abs(float(row.sum()) - 1.0) > _ROW_SUM_TOL:
                raise ContractError(f"attention row sums to {float(row.sum())}, expected 1")
        for i in self.visual_index_set:
            if not (0 <= i < self.context_len):
                raise ContractError(f"visual index {i} outside context of length {self.context_len}")

    def last_layers(self, n: int) -> "AttentionSnapshot":
        if n < 1 or n > len(self.per_layer):
            raise ContractError(f"cannot take last {n} of {len(self.per_layer)} layers")
        if n == len(self.per_layer):
            return self
        return AttentionSnapshot(
            per_layer=self.per_layer[-n:],
            context_len=self.context_len,
            visual_index_set=self.visual_index_set,
        )


@dataclass(frozen=True)
class GridAttentionMap:
    """Non-negative saliency scores over the ``s_g x s_g`` cell grid."""

    scores: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.scores.ndim != 2 or self.scores.shape[0] != self.scores.shape[1]:
            raise ContractError(f"grid map must be square, got {self.scores.shape}")
        if (self.scores < 0).any():
            raise ContractError("grid map scores must be non-negative")
        if not (self.scores > 0).any():
            raise ContractError("grid map must have at least one positive score")

    @property
    def s_g(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class HiddenStates:
    """Text/vision hidden states plus query/key projections."""

    text: np.ndarray
    vision: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray

    def __post_init__(self) -> None:
        if self.text.ndim != 2 or self.vision.ndim != 2:
            raise ShapeError("hidden states must be 2-d")
        d = self.text.shape[1]
        if self.vision.shape[1] != d:
            raise ShapeError("text and vision hidden sizes differ")
        if self.w_q.shape[0] != d or self.w_k.shape[0] != d:
            raise ShapeError("projection rows must match hidden size")
        if self.w_q.shape[1] != self.w_k.shape[1]:
            raise ShapeError("query and key projections must share their output size")
        if self.w_q.shape[1] < 1:
            raise ShapeError("projection output size must be >= 1")


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def cross_attention_map(h: HiddenStates) -> np.ndarray:
    """Row-softmax of scaled text-query / vision-key dot products.

    Returns an ``n_T x n_V`` matrix whose rows each sum to 1.
    """
    d_k = h.w_q.shape[1]
    logits = (h.text @ h.w_q) @ (h.vision @ h.w_k).T / np.sqrt(d_k)
    return row_softmax(logits)


def pool_to_grid(
    raw: np.ndarray,
    patch_to_cell: Sequence[tuple[int, int]] | Mapping[int, tuple[int, int]],
    spec: GridSpec,
    reduce_rows: str = "mean",
) -> GridAttentionMap:
    """Pool an ``n_T x n_V`` attention matrix onto the cell grid.

    Every visual column must map to exactly one cell; the cell score is the
    sum of the row-reduced attention of its patches. ``reduce_rows`` is
    ``"mean"`` (average over text rows) or ``"last"`` (final row only).
    """
    if raw.ndim != 2:
        raise ShapeError("raw attention must be 2-d")
    n_v = raw.shape[1]
    if reduce_rows == "mean":
        reduced = raw.mean(axis=0)
    elif reduce_rows == "last":
        reduced = raw[-1]
    else:
        raise ContractError(f"unknown row reduction {reduce_rows!r}")
    scores = np.zeros((spec.s_g, spec.s_g), dtype=float)
    for col in range(n_v):
        try:
            cell = patch_to_cell[col]
        except (KeyError, IndexError):
            raise MappingError(f"visual column {col} has no grid-cell mapping") from None
        r, c = cell
        if not (0 <= r < spec.s_g and 0 <= c < spec.s_g):
            raise MappingError(f"column {col} maps to out-of-grid cell ({r}, {c})")
        scores[r, c] += reduced[col]
    return GridAttentionMap(scores=scores)


def visual_attention_mass(snap: AttentionSnapshot) -> float:
    """Total across-layer mean attention on the visual context positions."""
    if not snap.per_layer:
        raise ContractError("snapshot has no layers")
    idx = list(snap.visual_index_set)
    if not idx:
        return 0.0
    return float(np.mean([row[idx].sum() for row in snap.per_layer]))


def attention_shift(curr: float, prev: float) -> float:
    """Signed change of visual attention mass between consecutive tokens."""
    for v in (curr, prev):
        if not (0.0 <= v <= 1.0):
            raise ContractError(f"attention mass {v} outside [0, 1]")
    return curr - prev

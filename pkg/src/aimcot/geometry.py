"""Grid and region arithmetic over images.

An image is partitioned into ``s_g x s_g`` cells; regions are square
groups of ``s_r x s_r`` cells with exact pixel bounding boxes. All bboxes
are half-open ``(x0, y0, x1, y1)``: the cells of a grid tile the image
with no overlap and no gap. When an image side is not divisible by
``s_g`` the leftover pixels widen the trailing cells of that axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError, GridIndexError

Bbox = tuple[int, int, int, int]


def _axis_bounds(total: int, parts: int, index: int) -> tuple[int, int]:
    # trailing `total % parts` slots are one pixel wider
    base, rem = divmod(total, parts)
    wide_from = parts - rem
    start = base * index + max(0, index - wide_from)
    width = base + (1 if index >= wide_from else 0)
    return start, start + width


@dataclass(frozen=True)
class GridSpec:
    """Partition of an ``image_w x image_h`` image into ``s_g x s_g`` cells."""

    s_g: int
    image_w: int
    image_h: int
    s_r: int = 1

    def __post_init__(self) -> None:
        if self.s_g < 1 or self.s_r < 1:
            raise ContractError("grid and region sizes must be >= 1")
        if self.s_r > self.s_g:
            raise ContractError(f"region span {self.s_r} exceeds grid size {self.s_g}")
        if self.image_w < self.s_g or self.image_h < self.s_g:
            raise ContractError(
                f"image {self.image_w}x{self.image_h} too small for {self.s_g} divisions"
            )

    @property
    def n_cells(self) -> int:
        return self.s_g * self.s_g

    def cell_index(self, row: int, col: int) -> int:
        return row * self.s_g + col

    def cell_bbox(self, row: int, col: int) -> Bbox:
        """Pixel bbox of one cell; cells tile the image exactly."""
        if not (0 <= row < self.s_g and 0 <= col < self.s_g):
            raise GridIndexError(f"cell ({row}, {col}) outside {self.s_g}x{self.s_g} grid")
        x0, x1 = _axis_bounds(self.image_w, self.s_g, col)
        y0, y1 = _axis_bounds(self.image_h, self.s_g, row)
        return (x0, y0, x1, y1)

    def region_from_cell(self, row: int, col: int) -> "Region":
        """Region of span ``s_r`` anchored at a cell, clamped inside the grid.

        Anchors whose region would overflow are shifted up/left so edge
        cells still yield a full-size region.
        """
        if not (0 <= row < self.s_g and 0 <= col < self.s_g):
            raise GridIndexError(f"anchor ({row}, {col}) outside {self.s_g}x{self.s_g} grid")
        row = min(row, self.s_g - self.s_r)
        col = min(col, self.s_g - self.s_r)
        x0, y0, _, _ = self.cell_bbox(row, col)
        _, _, x1, y1 = self.cell_bbox(row + self.s_r - 1, col + self.s_r - 1)
        return Region(row=row, col=col, span=self.s_r, bbox=(x0, y0, x1, y1))

    def empty_mask(self) -> "RegionMask":
        return RegionMask(spec=self, cells=np.zeros((self.s_g, self.s_g), dtype=bool))


@dataclass(frozen=True)
class Region:
    """A square group of grid cells with its exact pixel bbox."""

    row: int
    col: int
    span: int
    bbox: Bbox

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.row, self.col, self.span)

    def cells(self) -> Iterator[tuple[int, int]]:
        for r in range(self.row, self.row + self.span):
            for c in range(self.col, self.col + self.span):
                yield (r, c)


@dataclass(frozen=True)
class RegionMask:
    """Boolean cell matrix; True marks a masked (unusable) cell."""

    spec: GridSpec
    cells: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.cells.shape != (self.spec.s_g, self.spec.s_g):
            raise ContractError(
                f"mask shape {self.cells.shape} does not match grid {self.spec.s_g}"
            )
        if self.cells.dtype != np.bool_:
            raise ContractError("mask cells must be boolean")

    def any(self) -> bool:
        return bool(self.cells.any())

    def covers(self, row: int, col: int) -> bool:
        return bool(self.cells[row, col])

    def to_rows(self) -> list[list[bool]]:
        return [[bool(v) for v in row] for row in self.cells]


def apply_mask(mask: RegionMask, regions: Iterable[Region]) -> RegionMask:
    """OR the cell coverage of ``regions`` into ``mask`` (monotone, idempotent)."""
    cells = mask.cells.copy()
    for region in regions:
        if region.row + region.span > mask.spec.s_g or region.col + region.span > mask.spec.s_g:
            raise GridIndexError(f"region {region.key} outside {mask.spec.s_g}x{mask.spec.s_g} grid")
        cells[region.row:region.row + region.span, region.col:region.col + region.span] = True
    return RegionMask(spec=mask.spec, cells=cells)

"""Candidate region pools: attention-ranked plus uniform exploratory.

The selection stage draws from a diversified pool: the top-scoring cells
of a grid attention map, and extra anchors sampled uniformly from the
cells the attention ranking did not claim. Sampling is seeded and both
pools are deduplicated so every candidate is a distinct region.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .attention import GridAttentionMap
from .errors import CapacityError, ContractError
from .geometry import GridSpec, Region


class RegionSource(str, enum.Enum):
    ATTENTION = "attention"
    EXPLORATORY = "exploratory"


@dataclass(frozen=True)
class CandidateSet:
    """Ordered candidate regions: ``n`` attention-driven then ``m`` exploratory."""

    regions: tuple[Region, ...]
    sources: tuple[RegionSource, ...]
    n: int
    m: int

    def __post_init__(self) -> None:
        if len(self.regions) != self.n + self.m or len(self.sources) != self.n + self.m:
            raise ContractError("candidate counts do not add up")
        keys = [r.key for r in self.regions]
        if len(set(keys)) != len(keys):
            raise ContractError("candidate regions must be distinct")
        for i, src in enumerate(self.sources):
            expected = RegionSource.ATTENTION if i < self.n else RegionSource.EXPLORATORY
            if src is not expected:
                raise ContractError("sources must be attention-first, exploratory after")

    def __len__(self) -> int:
        return len(self.regions)


def top_n_attention(map_: GridAttentionMap, n: int, spec: GridSpec) -> list[Region]:
    """Regions anchored at the ``n`` highest-scoring cells.

    Descending score; ties broken by row-major cell index. Anchors whose
    clamped region duplicates an earlier one are skipped so the result
    always holds ``n`` distinct regions.
    """
    if n > spec.n_cells:
        raise CapacityError(f"requested {n} regions from {spec.n_cells} cells")
    if map_.s_g != spec.s_g:
        raise ContractError(f"map grid {map_.s_g} does not match spec grid {spec.s_g}")
    flat = map_.scores.reshape(-1)
    order = sorted(range(spec.n_cells), key=lambda i: (-flat[i], i))
    picked: list[Region] = []
    seen: set[tuple[int, int, int]] = set()
    for idx in order:
        if len(picked) == n:
            break
        region = spec.region_from_cell(idx // spec.s_g, idx % spec.s_g)
        if region.key in seen:
            continue
        seen.add(region.key)
        picked.append(region)
    if len(picked) < n:
        raise CapacityError(f"grid only admits {len(picked)} distinct regions, {n} requested")
    return picked


def exploratory_sample(
    spec: GridSpec, m: int, exclude: list[Region], seed: int
) -> list[Region]:
    """``m`` regions anchored uniformly at random, avoiding ``exclude``.

    Anchors are drawn without replacement from cells whose (clamped)
    region is not already present; deterministic for a given seed.
    """
    if m + len(exclude) > spec.n_cells:
        raise CapacityError(
            f"{m} samples plus {len(exclude)} exclusions exceed {spec.n_cells} cells"
        )
    taken = {r.key for r in exclude}
    eligible = [
        (row, col)
        for row in range(spec.s_g)
        for col in range(spec.s_g)
        if spec.region_from_cell(row, col).key not in taken
    ]
    rng = np.random.Generator(np.random.PCG64(seed))
    picked: list[Region] = []
    for _ in range(m):
        if not eligible:
            raise CapacityError("ran out of distinct anchors while sampling")
        i = int(rng.integers(len(eligible)))
        row, col = eligible.pop(i)
        region = spec.region_from_cell(row, col)
        taken.add(region.key)
        eligible = [rc for rc in eligible if spec.region_from_cell(*rc).key not in taken]
        picked.append(region)
    return picked


def build_candidates(
    map_: GridAttentionMap, n: int, m: int, spec: GridSpec, seed: int
) -> CandidateSet:
    """Attention top-``n`` followed by ``m`` seeded exploratory samples."""
    attn = top_n_attention(map_, n, spec)
    exp = exploratory_sample(spec, m, exclude=attn, seed=seed)
    return CandidateSet(
        regions=tuple(attn + exp),
        sources=tuple([RegionSource.ATTENTION] * n + [RegionSource.EXPLORATORY] * m),
        n=n,
        m=m,
    )

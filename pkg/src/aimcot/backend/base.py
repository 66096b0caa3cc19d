"""Step-backend abstraction: contexts in, next-token distributions out.

A backend evaluates a :class:`GenerationContext` into a token distribution
plus an attention snapshot, supports batched lookahead over single-region
extensions of a shared prefix, turns image regions into fixed-length token
ids, and writes an image description on request. Token ids are opaque to
the engine; encode/decode are backend duties.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Union, runtime_checkable

import numpy as np

from ..attention import AttentionSnapshot
from ..errors import ContractError
from ..geometry import GridSpec, Region, RegionMask

REGION_MARKER_TOKENS = 2  # begin/end-of-image delimiters around a region's vokens


@dataclass(frozen=True)
class TokenDistribution:
    """Normalized probability vector over the vocabulary."""

    probs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.probs.ndim != 1:
            raise ContractError("distribution must be 1-d")
        if (self.probs < 0).any():
            raise ContractError("probabilities must be non-negative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-6:
            raise ContractError(f"probabilities sum to {total}, expected 1")

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class TextSegment:
    tokens: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class VisualBaseSegment:
    """The base image: one token position per grid cell, row-major."""

    image: str
    n_patches: int
    mask: RegionMask | None = None

    @property
    def length(self) -> int:
        return self.n_patches


@dataclass(frozen=True)
class RegionSegment:
    """An inserted region: its vokens wrapped in begin/end markers."""

    region: Region
    vokens: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.vokens) + REGION_MARKER_TOKENS


Segment = Union[TextSegment, VisualBaseSegment, RegionSegment]


@dataclass(frozen=True)
class GenerationContext:
    """Ordered text and visual segments forming the evolving context."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        bases = [i for i, s in enumerate(self.segments) if isinstance(s, VisualBaseSegment)]
        if len(bases) != 1:
            raise ContractError(f"context needs exactly one base image, found {len(bases)}")
        first_region = next(
            (i for i, s in enumerate(self.segments) if isinstance(s, RegionSegment)), None
        )
        if first_region is not None and first_region < bases[0]:
            raise ContractError("region segments must come after the base image")

    @property
    def cursor(self) -> int:
        return sum(s.length for s in self.segments)

    @property
    def image(self) -> str:
        return next(s.image for s in self.segments if isinstance(s, VisualBaseSegment))

    @property
    def mask(self) -> RegionMask | None:
        return next(s.mask for s in self.segments if isinstance(s, VisualBaseSegment))

    def generated_count(self) -> int:
        """Number of text tokens after the base image (the generated ones)."""
        count = 0
        seen_base = False
        for seg in self.segments:
            if isinstance(seg, VisualBaseSegment):
                seen_base = True
            elif seen_base and isinstance(seg, TextSegment):
                count += seg.length
        return count

    def with_text(self, tokens: tuple[int, ...] | list[int]) -> "GenerationContext":
        """Append text tokens, merging into a trailing text segment."""
        tokens = tuple(tokens)
        if not tokens:
            return self
        if self.segments and isinstance(self.segments[-1], TextSegment):
            merged = TextSegment(tokens=self.segments[-1].tokens + tokens)
            return GenerationContext(segments=self.segments[:-1] + (merged,))
        return GenerationContext(segments=self.segments + (TextSegment(tokens=tokens),))

    def with_region(self, segment: RegionSegment) -> "GenerationContext":
        return GenerationContext(segments=self.segments + (segment,))

    def region_segments(self) -> list[RegionSegment]:
        return [s for s in self.segments if isinstance(s, RegionSegment)]

    def base_patch_positions(self) -> list[int]:
        """Context positions of the base-image patches, row-major."""
        offset = 0
        for seg in self.segments:
            if isinstance(seg, VisualBaseSegment):
                return list(range(offset, offset + seg.n_patches))
            offset += seg.length
        raise ContractError("context has no base image")  # unreachable


@dataclass(frozen=True)
class StepResult:
    """One evaluation: next-token distribution plus attention snapshot."""

    distribution: TokenDistribution
    attention: AttentionSnapshot


@dataclass(frozen=True)
class BackendInfo:
    """Constants a backend declares at initialization."""

    v_sub: int
    vocab_size: int
    n_layers: int
    eos_id: int
    newline_id: int
    grid: GridSpec


@runtime_checkable
class StepBackend(Protocol):
    """The evaluation surface the whole engine drives."""

    @property
    def info(self) -> BackendInfo: ...

    def evaluate(self, ctx: GenerationContext) -> StepResult: ...

    def evaluate_batch(
        self, base: GenerationContext, suffixes: list[RegionSegment]
    ) -> list[StepResult]: ...

    def embed_region(self, image: str, region: Region) -> tuple[int, ...]: ...

    def describe(self, image: str, question: str, prompt_template: str) -> str: ...

    def encode(self, text: str) -> tuple[int, ...]: ...

    def decode(self, ids: tuple[int, ...] | list[int]) -> str: ...


def initial_context(
    backend: StepBackend, prompt_tokens: tuple[int, ...], image: str,
    mask: RegionMask | None = None,
) -> GenerationContext:
    """Question text followed by the base image."""
    base = VisualBaseSegment(
        image=image, n_patches=backend.info.grid.n_cells, mask=mask
    )
    return GenerationContext(segments=(TextSegment(tokens=prompt_tokens), base))

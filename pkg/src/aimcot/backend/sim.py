"""Deterministic simulated backend with a planted-evidence entropy law.

The simulated model makes every selection experiment decidable at desk
scale: its next-token entropy is an exact function of which evidence
cells the context's inserted regions cover, and its attention rows are
pure functions of (spec, context), so identical contexts always evaluate
identically.

Model law (shared verbatim with the reference wire backend):

- Entropy law. With ``covered`` = union of cells covered by the context's
  region segments, minus masked cells::

      hits  = |covered & evidence_cells|
      pairs = #{(a, b) in complementary_pairs : a in covered and b in covered}
      H     = clamp(base_entropy_bits - per_cell_reduction_bits * hits
                    - pair_bonus_bits * pairs, 0, log2(vocab_size))

  The returned distribution is the two-level family hitting H exactly:
  one elevated "answer" token, all other tokens sharing the remainder
  uniformly, with the elevated mass found by 200 bisection steps on
  [1/V, 1].

- Answer token. ``vocab_size - 2`` by default; if ``scripted_token_ids``
  is set, the g-th generated token's answer id is ``scripted_token_ids[g]``
  (g = number of text tokens after the base image). With a base entropy of
  0 the scripted token is therefore emitted deterministically.

- Attention law. For layer ``l`` and context position ``j``::

      u      = blake2b("attn:" + blake2b(wire_ctx, 16) + pack(">qqq", seed, l, j), 8) / 2^64
      w      = 0                      for a masked-cell position
      w      = u + bias_c             for an evidence-cell position
      w      = u                      otherwise
      row_l  = w / sum(w)

  where ``bias_c = attention_bias * 2`` when the cell's name token appears
  in the context text (the description produced by :meth:`describe` names
  every evidence cell) and ``attention_bias`` otherwise. Normalization
  divides by the sequential left-to-right sum of the weights, keeping rows
  bit-identical across independent implementations. With
  ``attention_bias = 0`` the map is seed noise only.

- Tokenizer. Fixed id layout over ``vocab_size`` ids (G = grid side)::

      10            newline        "\\n"
      11 / 12       region markers (begin / end)
      16 + i        cell-name token "r{row}c{col}",  i = row * G + col
      16 + G^2 + i  region voken for cell i
      >= 16 + 2G^2  hashed word ids;  vocab-2 = answer,  vocab-1 = eos

  ``embed_region`` returns the vokens of the covered cells in row-major
  order, so distinct cell sets give distinct id vectors.
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass

import numpy as np

from ..attention import AttentionSnapshot
from ..errors import ContractError, GridIndexError, TemplateError
from ..geometry import GridSpec, Region
from . import wire
from .base import (
    BackendInfo,
    GenerationContext,
    RegionSegment,
    StepResult,
    TextSegment,
    TokenDistribution,
    VisualBaseSegment,
)

NEWLINE_ID = 10
BOI_ID = 11
EOI_ID = 12
MARKER_BASE = 16

_CELL_WORD = re.compile(r"^r(\d+)c(\d+)$")

Cell = tuple[int, int]


@dataclass(frozen=True)
class SimOracleSpec:
    """Full description of one simulated model instance."""

    grid: GridSpec
    evidence_cells: frozenset[Cell]
    vocab_size: int = 512
    base_entropy_bits: float = 6.0
    per_cell_reduction_bits: float = 1.5
    attention_bias: float = 0.0
    noise_seed: int = 0
    complementary_pairs: tuple[tuple[Cell, Cell], ...] = ()
    pair_bonus_bits: float | None = None
    scripted_token_ids: tuple[int, ...] | None = None
    n_layers: int = 3

    def __post_init__(self) -> None:
        g = self.grid.s_g
        word_base = MARKER_BASE + 2 * g * g
        if self.vocab_size < word_base + 16:
            raise ContractError(
                f"vocab_size {self.vocab_size} too small for grid {g} (need >= {word_base + 16})"
            )
        if self.base_entropy_bits > math.log2(self.vocab_size) + 1e-12:
            raise ContractError("base entropy exceeds log2(vocab_size)")
        if self.base_entropy_bits < 0:
            raise ContractError("base entropy must be non-negative")
        for r, c in self.evidence_cells:
            if not (0 <= r < g and 0 <= c < g):
                raise ContractError(f"evidence cell ({r}, {c}) outside grid")
        if self.n_layers < 1:
            raise ContractError("n_layers must be >= 1")

    @property
    def pair_bonus(self) -> float:
        return (
            self.per_cell_reduction_bits
            if self.pair_bonus_bits is None
            else self.pair_bonus_bits
        )

    def to_dict(self) -> dict:
        out: dict = {
            "grid": {
                "s_g": self.grid.s_g,
                "s_r": self.grid.s_r,
                "image_w": self.grid.image_w,
                "image_h": self.grid.image_h,
            },
            "evidence_cells": sorted([r, c] for r, c in self.evidence_cells),
            "vocab_size": self.vocab_size,
            "base_entropy_bits": self.base_entropy_bits,
            "per_cell_reduction_bits": self.per_cell_reduction_bits,
            "attention_bias": self.attention_bias,
            "noise_seed": self.noise_seed,
            "complementary_pairs": [
                [[a, b], [c, d]] for (a, b), (c, d) in self.complementary_pairs
            ],
            "n_layers": self.n_layers,
        }
        if self.pair_bonus_bits is not None:
            out["pair_bonus_bits"] = self.pair_bonus_bits
        if self.scripted_token_ids is not None:
            out["scripted_token_ids"] = list(self.scripted_token_ids)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimOracleSpec":
        g = data["grid"]
        scripted = data.get("scripted_token_ids")
        return cls(
            grid=GridSpec(
                s_g=int(g["s_g"]), image_w=int(g["image_w"]),
                image_h=int(g["image_h"]), s_r=int(g.get("s_r", 1)),
            ),
            evidence_cells=frozenset((int(r), int(c)) for r, c in data["evidence_cells"]),
            vocab_size=int(data.get("vocab_size", 512)),
            base_entropy_bits=float(data.get("base_entropy_bits", 6.0)),
            per_cell_reduction_bits=float(data.get("per_cell_reduction_bits", 1.5)),
            attention_bias=float(data.get("attention_bias", 0.0)),
            noise_seed=int(data.get("noise_seed", 0)),
            complementary_pairs=tuple(
                ((int(p[0][0]), int(p[0][1])), (int(p[1][0]), int(p[1][1])))
                for p in data.get("complementary_pairs", [])
            ),
            pair_bonus_bits=(
                float(data["pair_bonus_bits"]) if "pair_bonus_bits" in data else None
            ),
            scripted_token_ids=tuple(int(t) for t in scripted) if scripted else None,
            n_layers=int(data.get("n_layers", 3)),
        )


def default_spec(**overrides) -> SimOracleSpec:
    """A small planted-evidence instance usable out of the box."""
    params: dict = {
        "grid": GridSpec(s_g=4, image_w=64, image_h=64, s_r=1),
        "evidence_cells": frozenset({(0, 1), (2, 3), (3, 0)}),
        "vocab_size": 512,
        "base_entropy_bits": 6.0,
        "per_cell_reduction_bits": 1.5,
        "attention_bias": 4.0,
        "noise_seed": 0,
    }
    params.update(overrides)
    return SimOracleSpec(**params)


def two_level_distribution(
    target_bits: float, vocab_size: int, answer_id: int
) -> np.ndarray:
    """Distribution of entropy ``target_bits``: one elevated token, rest uniform.

    Elevated mass found by 200 bisection steps; the entropy of the result
    matches the target far beyond 1e-9.
    """
    h_max = math.log2(vocab_size)
    probs = np.zeros(vocab_size, dtype=float)
    if target_bits >= h_max:
        probs[:] = 1.0 / vocab_size
        return probs
    if target_bits <= 0.0:
        probs[answer_id] = 1.0
        return probs

    def ent(q: float) -> float:
        rest = (1.0 - q) / (vocab_size - 1)
        return -(q * math.log2(q) + (vocab_size - 1) * rest * math.log2(rest))

    lo, hi = 1.0 / vocab_size, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if ent(mid) > target_bits:
            lo = mid
        else:
            hi = mid
    q = (lo + hi) / 2.0
    probs[:] = (1.0 - q) / (vocab_size - 1)
    probs[answer_id] = q
    return probs


class SimulatedBackend:
    """In-process realization of the model law above."""

    def __init__(self, spec: SimOracleSpec):
        self.spec = spec
        g = spec.grid.s_g
        self._marker_base = MARKER_BASE
        self._voken_base = MARKER_BASE + g * g
        self._word_base = MARKER_BASE + 2 * g * g
        self._info = BackendInfo(
            v_sub=spec.grid.s_r * spec.grid.s_r,
            vocab_size=spec.vocab_size,
            n_layers=spec.n_layers,
            eos_id=spec.vocab_size - 1,
            newline_id=NEWLINE_ID,
            grid=spec.grid,
        )

    @property
    def info(self) -> BackendInfo:
        return self._info

    @property
    def answer_id(self) -> int:
        return self.spec.vocab_size - 2

    # -- tokenizer ---------------------------------------------------------

    def encode(self, text: str) -> tuple[int, ...]:
        g = self.spec.grid.s_g
        ids: list[int] = []
        for word in text.replace("\n", " \n ").split(" "):
            if not word:
                continue
            if word == "\n":
                ids.append(NEWLINE_ID)
                continue
            m = _CELL_WORD.match(word)
            if m and int(m.group(1)) < g and int(m.group(2)) < g:
                ids.append(self._marker_base + int(m.group(1)) * g + int(m.group(2)))
                continue
            span = self.spec.vocab_size - 1 - self._word_base
            h = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
            ids.append(self._word_base + int.from_bytes(h, "big") % span)
        return tuple(ids)

    def decode(self, ids) -> str:
        g = self.spec.grid.s_g
        words: list[str] = []
        for t in ids:
            if t == NEWLINE_ID:
                words.append("\n")
            elif t == BOI_ID:
                words.append("<boi>")
            elif t == EOI_ID:
                words.append("<eoi>")
            elif t == self.spec.vocab_size - 1:
                words.append("<eos>")
            elif t == self.answer_id:
                words.append("<answer>")
            elif self._marker_base <= t < self._voken_base:
                i = t - self._marker_base
                words.append(f"r{i // g}c{i % g}")
            elif self._voken_base <= t < self._word_base:
                i = t - self._voken_base
                words.append(f"<v{i // g}.{i % g}>")
            else:
                words.append(f"w{t}")
        return " ".join(words)

    # -- protocol operations -----------------------------------------------

    def embed_region(self, image: str, region: Region) -> tuple[int, ...]:
        g = self.spec.grid.s_g
        if not (
            0 <= region.row and 0 <= region.col
            and region.row + region.span <= g and region.col + region.span <= g
        ):
            raise GridIndexError(f"region {region.key} outside {g}x{g} grid")
        return tuple(
            self._voken_base + r * g + c
            for r, c in sorted(region.cells(), key=lambda rc: rc[0] * g + rc[1])
        )

    def describe(self, image: str, question: str, prompt_template: str) -> str:
        if "{question}" not in prompt_template:
            raise TemplateError("prompt template must contain the {question} placeholder")
        g = self.spec.grid.s_g
        cells = sorted(self.spec.evidence_cells, key=lambda rc: rc[0] * g + rc[1])
        if not cells:
            return "Focus on the whole image to answer."
        names = " ".join(f"r{r}c{c}" for r, c in cells)
        return f"Focus on grid cells {names} to answer."

    def evaluate(self, ctx: GenerationContext) -> StepResult:
        sig = hashlib.blake2b(wire.context_signature(ctx), digest_size=16).digest()
        probs = two_level_distribution(
            self._target_entropy(ctx), self.spec.vocab_size, self._answer_for(ctx)
        )
        rows, visual = self._attention_rows(ctx, sig)
        snapshot = AttentionSnapshot(
            per_layer=tuple(rows),
            context_len=ctx.cursor,
            visual_index_set=tuple(visual),
        )
        return StepResult(distribution=TokenDistribution(probs=probs), attention=snapshot)

    def evaluate_batch(
        self, base: GenerationContext, suffixes: list[RegionSegment]
    ) -> list[StepResult]:
        return [self.evaluate(base.with_region(s)) for s in suffixes]

    # -- model law ----------------------------------------------------------

    def _masked(self, ctx: GenerationContext, cell: Cell) -> bool:
        mask = ctx.mask
        return mask is not None and mask.covers(*cell)

    def _target_entropy(self, ctx: GenerationContext) -> float:
        covered = {
            cell
            for seg in ctx.region_segments()
            for cell in seg.region.cells()
            if not self._masked(ctx, cell)
        }
        hits = len(covered & self.spec.evidence_cells)
        pair_hits = sum(
            1 for a, b in self.spec.complementary_pairs if a in covered and b in covered
        )
        h = (
            self.spec.base_entropy_bits
            - self.spec.per_cell_reduction_bits * hits
            - self.spec.pair_bonus * pair_hits
        )
        return max(0.0, min(h, math.log2(self.spec.vocab_size)))

    def _answer_for(self, ctx: GenerationContext) -> int:
        scripted = self.spec.scripted_token_ids
        if scripted is not None:
            g = ctx.generated_count()
            if g < len(scripted):
                return scripted[g]
        return self.answer_id

    def _positions(self, ctx: GenerationContext) -> list[tuple[bool, Cell | None]]:
        """(is_visual, cell) per context position, in order."""
        g = self.spec.grid.s_g
        out: list[tuple[bool, Cell | None]] = []
        for seg in ctx.segments:
            if isinstance(seg, TextSegment):
                out.extend((False, None) for _ in seg.tokens)
            elif isinstance(seg, VisualBaseSegment):
                out.extend((True, (i // g, i % g)) for i in range(seg.n_patches))
            else:
                cells = sorted(seg.region.cells(), key=lambda rc: rc[0] * g + rc[1])
                out.append((True, None))
                out.extend((True, cell) for cell in cells)
                out.append((True, None))
        return out

    def _attention_rows(
        self, ctx: GenerationContext, sig: bytes
    ) -> tuple[list[np.ndarray], list[int]]:
        g = self.spec.grid.s_g
        positions = self._positions(ctx)
        visual = [j for j, (is_v, _) in enumerate(positions) if is_v]
        text_tokens = {
            t for seg in ctx.segments if isinstance(seg, TextSegment) for t in seg.tokens
        }
        rows: list[np.ndarray] = []
        for layer in range(self.spec.n_layers):
            weights: list[float] = []
            for j, (is_v, cell) in enumerate(positions):
                u = self._u01(sig, layer, j)
                if is_v and cell is not None:
                    if self._masked(ctx, cell):
                        weights.append(0.0)
                        continue
                    if cell in self.spec.evidence_cells:
                        named = (MARKER_BASE + cell[0] * g + cell[1]) in text_tokens
                        u += self.spec.attention_bias * (2.0 if named else 1.0)
                weights.append(u)
            # sequential summation keeps rows bit-identical across
            # independent implementations of this law
            total = sum(weights)
            if total <= 0.0:
                rows.append(np.full(len(positions), 1.0 / len(positions)))
            else:
                rows.append(np.array([w / total for w in weights]))
        return rows, visual

    def _u01(self, sig: bytes, layer: int, pos: int) -> float:
        data = b"attn:" + sig + struct.pack(">qqq", self.spec.noise_seed, layer, pos)
        h = hashlib.blake2b(data, digest_size=8).digest()
        return int.from_bytes(h, "big") / 2.0**64

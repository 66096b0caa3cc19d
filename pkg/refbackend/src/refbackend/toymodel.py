"""Self-contained toy model with fully pinned behavior.

Implements the exact laws the engine's in-process simulated model follows,
so the two can be compared number for number over the wire:

- Entropy law: next-token entropy is
  ``clamp(base - per_cell * |covered & evidence| - pair_bonus * pairs, 0, log2 V)``
  where ``covered`` is the set of grid cells the context's inserted
  regions cover, minus masked cells, and ``pairs`` counts complementary
  pairs with both members covered.
- Distribution: the two-level family matching that entropy exactly (one
  elevated answer token, the rest uniform; elevated mass found by 200
  bisection steps on [1/V, 1]).
- Attention: per layer l and position j the weight is
  ``u = blake2b("attn:" + blake2b(canonical_segments_json, 16) + pack(">qqq", seed, l, j), 8) / 2^64``
  plus ``bias`` on evidence-cell positions (doubled when the cell's name
  token appears in the context text), zero on masked-cell positions; rows
  normalize to sum 1.
- Tokenizer id layout (G = grid side): 10 newline, 11/12 region markers,
  16+i cell-name tokens ("r{row}c{col}"), 16+G^2+i region vokens,
  >= 16+2G^2 hashed words; vocab-2 answer, vocab-1 end-of-response.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import struct
from dataclasses import dataclass

NEWLINE_ID = 10
BOI_ID = 11
EOI_ID = 12
MARKER_BASE = 16

_CELL_WORD = re.compile(r"^r(\d+)c(\d+)$")

Cell = tuple[int, int]


class ToyModelError(Exception):
    """Raised for requests the toy model cannot serve."""


@dataclass(frozen=True)
class ToySpec:
    s_g: int
    s_r: int
    image_w: int
    image_h: int
    evidence_cells: frozenset[Cell]
    vocab_size: int
    base_entropy_bits: float
    per_cell_reduction_bits: float
    attention_bias: float
    noise_seed: int
    complementary_pairs: tuple[tuple[Cell, Cell], ...]
    pair_bonus_bits: float
    scripted_token_ids: tuple[int, ...] | None
    n_layers: int

    @classmethod
    def from_dict(cls, data: dict) -> "ToySpec":
        grid = data["grid"]
        per_cell = float(data.get("per_cell_reduction_bits", 1.5))
        scripted = data.get("scripted_token_ids")
        return cls(
            s_g=int(grid["s_g"]),
            s_r=int(grid.get("s_r", 1)),
            image_w=int(grid["image_w"]),
            image_h=int(grid["image_h"]),
            evidence_cells=frozenset((int(r), int(c)) for r, c in data["evidence_cells"]),
            vocab_size=int(data.get("vocab_size", 512)),
            base_entropy_bits=float(data.get("base_entropy_bits", 6.0)),
            per_cell_reduction_bits=per_cell,
            attention_bias=float(data.get("attention_bias", 0.0)),
            noise_seed=int(data.get("noise_seed", 0)),
            complementary_pairs=tuple(
                ((int(p[0][0]), int(p[0][1])), (int(p[1][0]), int(p[1][1])))
                for p in data.get("complementary_pairs", [])
            ),
            pair_bonus_bits=float(data.get("pair_bonus_bits", per_cell)),
            scripted_token_ids=tuple(int(t) for t in scripted) if scripted else None,
            n_layers=int(data.get("n_layers", 3)),
        )


def two_level_distribution(target_bits: float, vocab: int, answer_id: int) -> list[float]:
    h_max = math.log2(vocab)
    if target_bits >= h_max:
        return [1.0 / vocab] * vocab
    probs = [0.0] * vocab
    if target_bits <= 0.0:
        probs[answer_id] = 1.0
        return probs

    def ent(q: float) -> float:
        rest = (1.0 - q) / (vocab - 1)
        return -(q * math.log2(q) + (vocab - 1) * rest * math.log2(rest))

    lo, hi = 1.0 / vocab, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if ent(mid) > target_bits:
            lo = mid
        else:
            hi = mid
    q = (lo + hi) / 2.0
    rest = (1.0 - q) / (vocab - 1)
    probs = [rest] * vocab
    probs[answer_id] = q
    return probs


class ToyModel:
    """Evaluates wire-format segment lists; no external dependencies."""

    def __init__(self, spec: ToySpec):
        self.spec = spec
        g = spec.s_g
        self.marker_base = MARKER_BASE
        self.voken_base = MARKER_BASE + g * g
        self.word_base = MARKER_BASE + 2 * g * g
        if spec.vocab_size < self.word_base + 16:
            raise ToyModelError(
                f"vocab_size {spec.vocab_size} too small for grid {g}"
            )
        self.answer_id = spec.vocab_size - 2
        self.eos_id = spec.vocab_size - 1

    # -- grid geometry -------------------------------------------------------

    def _axis_bounds(self, total: int, index: int) -> tuple[int, int]:
        base, rem = divmod(total, self.spec.s_g)
        wide_from = self.spec.s_g - rem
        start = base * index + max(0, index - wide_from)
        width = base + (1 if index >= wide_from else 0)
        return start, start + width

    def cell_bbox(self, row: int, col: int) -> tuple[int, int, int, int]:
        x0, x1 = self._axis_bounds(self.spec.image_w, col)
        y0, y1 = self._axis_bounds(self.spec.image_h, row)
        return (x0, y0, x1, y1)

    def cells_in_bbox(self, bbox: list[int]) -> list[Cell]:
        x0, y0, x1, y1 = (int(v) for v in bbox)
        if not (0 <= x0 < x1 <= self.spec.image_w and 0 <= y0 < y1 <= self.spec.image_h):
            raise ToyModelError(f"bbox {bbox} outside the image")
        cells = []
        for r in range(self.spec.s_g):
            for c in range(self.spec.s_g):
                cx0, cy0, cx1, cy1 = self.cell_bbox(r, c)
                if cx0 >= x0 and cy0 >= y0 and cx1 <= x1 and cy1 <= y1:
                    cells.append((r, c))
        return cells

    # -- tokenizer -----------------------------------------------------------

    def encode(self, text: str) -> list[int]:
        g = self.spec.s_g
        ids: list[int] = []
        for word in text.replace("\n", " \n ").split(" "):
            if not word:
                continue
            if word == "\n":
                ids.append(NEWLINE_ID)
                continue
            m = _CELL_WORD.match(word)
            if m and int(m.group(1)) < g and int(m.group(2)) < g:
                ids.append(self.marker_base + int(m.group(1)) * g + int(m.group(2)))
                continue
            span = self.spec.vocab_size - 1 - self.word_base
            h = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
            ids.append(self.word_base + int.from_bytes(h, "big") % span)
        return ids

    def decode(self, ids: list[int]) -> str:
        g = self.spec.s_g
        words: list[str] = []
        for t in ids:
            if t == NEWLINE_ID:
                words.append("\n")
            elif t == BOI_ID:
                words.append("<boi>")
            elif t == EOI_ID:
                words.append("<eoi>")
            elif t == self.eos_id:
                words.append("<eos>")
            elif t == self.answer_id:
                words.append("<answer>")
            elif self.marker_base <= t < self.voken_base:
                i = t - self.marker_base
                words.append(f"r{i // g}c{i % g}")
            elif self.voken_base <= t < self.word_base:
                i = t - self.voken_base
                words.append(f"<v{i // g}.{i % g}>")
            else:
                words.append(f"w{t}")
        return " ".join(words)

    # -- protocol operations ---------------------------------------------------

    def embed_bbox(self, bbox: list[int]) -> list[int]:
        g = self.spec.s_g
        cells = self.cells_in_bbox(bbox)
        expected = self.spec.s_r * self.spec.s_r
        if len(cells) != expected:
            raise ToyModelError(
                f"bbox {bbox} covers {len(cells)} cells, regions hold {expected}"
            )
        return [self.voken_base + r * g + c for r, c in sorted(
            cells, key=lambda rc: rc[0] * g + rc[1]
        )]

    def describe(self) -> str:
        g = self.spec.s_g
        cells = sorted(self.spec.evidence_cells, key=lambda rc: rc[0] * g + rc[1])
        if not cells:
            return "Focus on the whole image to answer."
        names = " ".join(f"r{r}c{c}" for r, c in cells)
        return f"Focus on grid cells {names} to answer."

    # -- evaluation ---------------------------------------------------------------

    def _segment_cells(self, seg: dict) -> list[Cell]:
        row, col, span = int(seg["row"]), int(seg["col"]), int(seg["span"])
        return [(row + dr, col + dc) for dr in range(span) for dc in range(span)]

    def _mask(self, segments: list[dict]) -> set[Cell]:
        for seg in segments:
            if seg.get("type") == "visual_base" and "mask" in seg:
                return {
                    (r, c)
                    for r, row in enumerate(seg["mask"])
                    for c, flag in enumerate(row)
                    if flag
                }
        return set()

    def _target_entropy(self, segments: list[dict]) -> float:
        masked = self._mask(segments)
        covered = {
            cell
            for seg in segments
            if seg.get("type") == "visual_region"
            for cell in self._segment_cells(seg)
            if cell not in masked
        }
        hits = len(covered & self.spec.evidence_cells)
        pair_hits = sum(
            1 for a, b in self.spec.complementary_pairs
            if a in covered and b in covered
        )
        h = (
            self.spec.base_entropy_bits
            - self.spec.per_cell_reduction_bits * hits
            - self.spec.pair_bonus_bits * pair_hits
        )
        return max(0.0, min(h, math.log2(self.spec.vocab_size)))

    def _answer_for(self, segments: list[dict]) -> int:
        scripted = self.spec.scripted_token_ids
        if scripted is None:
            return self.answer_id
        generated = 0
        seen_base = False
        for seg in segments:
            kind = seg.get("type")
            if kind == "visual_base":
                seen_base = True
            elif seen_base and kind == "text":
                generated += len(seg["tokens"])
        return scripted[generated] if generated < len(scripted) else self.answer_id

    def _positions(self, segments: list[dict]) -> list[tuple[bool, Cell | None]]:
        g = self.spec.s_g
        out: list[tuple[bool, Cell | None]] = []
        for seg in segments:
            kind = seg.get("type")
            if kind == "text":
                out.extend((False, None) for _ in seg["tokens"])
            elif kind == "visual_base":
                out.extend((True, (i // g, i % g)) for i in range(g * g))
            elif kind == "visual_region":
                cells = sorted(
                    self._segment_cells(seg), key=lambda rc: rc[0] * g + rc[1]
                )
                out.append((True, None))
                out.extend((True, cell) for cell in cells)
                out.append((True, None))
            else:
                raise ToyModelError(f"unknown segment type {kind!r}")
        return out

    def evaluate(self, segments: list[dict]) -> dict:
        sig = hashlib.blake2b(
            json.dumps(segments, sort_keys=True, separators=(",", ":")).encode("utf-8"),
            digest_size=16,
        ).digest()
        probs = two_level_distribution(
            self._target_entropy(segments), self.spec.vocab_size,
            self._answer_for(segments),
        )
        masked = self._mask(segments)
        text_tokens = {
            t for seg in segments if seg.get("type") == "text" for t in seg["tokens"]
        }
        positions = self._positions(segments)
        visual = [j for j, (is_v, _) in enumerate(positions) if is_v]
        g = self.spec.s_g
        rows: list[list[float]] = []
        for layer in range(self.spec.n_layers):
            weights = []
            for j, (is_v, cell) in enumerate(positions):
                data = b"attn:" + sig + struct.pack(
                    ">qqq", self.spec.noise_seed, layer, j
                )
                u = int.from_bytes(
                    hashlib.blake2b(data, digest_size=8).digest(), "big"
                ) / 2.0**64
                if is_v and cell is not None:
                    if cell in masked:
                        weights.append(0.0)
                        continue
                    if cell in self.spec.evidence_cells:
                        named = (MARKER_BASE + cell[0] * g + cell[1]) in text_tokens
                        u += self.spec.attention_bias * (2.0 if named else 1.0)
                weights.append(u)
            total = sum(weights)
            if total <= 0.0:
                rows.append([1.0 / len(weights)] * len(weights))
            else:
                rows.append([w / total for w in weights])
        return {"probs": probs, "attention": rows, "visual_indices": visual}

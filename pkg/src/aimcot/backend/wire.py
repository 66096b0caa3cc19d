"""Canonical wire encoding of contexts and protocol messages.

One JSON object per line, UTF-8. Requests carry ``{"id", "op", ...}``;
replies either ``{"id", "ok": true, ...}`` or
``{"id", "error": {"code", "message"}}``. Replies arrive in request order
and ids round-trip unchanged.

Segment encoding (also the canonical form hashed by the simulated model):

- text:          {"type": "text", "tokens": [int, ...]}
- visual_base:   {"type": "visual_base", "image": str[, "mask": [[bool, ...], ...]]}
- visual_region: {"type": "visual_region", "row": int, "col": int, "span": int,
                  "bbox": [x0, y0, x1, y1], "vokens": [int, ...]}

The ``mask`` key is present only when at least one cell is masked, so an
all-clear mask encodes identically to no mask at all.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from ..errors import ContractError
from ..geometry import GridSpec, Region, RegionMask
from .base import (
    GenerationContext,
    RegionSegment,
    Segment,
    TextSegment,
    VisualBaseSegment,
)

PROTOCOL_VERSION = 1


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_segment(seg: Segment) -> dict:
    if isinstance(seg, TextSegment):
        return {"type": "text", "tokens": list(seg.tokens)}
    if isinstance(seg, VisualBaseSegment):
        out: dict = {"type": "visual_base", "image": seg.image}
        if seg.mask is not None and seg.mask.any():
            out["mask"] = seg.mask.to_rows()
        return out
    if isinstance(seg, RegionSegment):
        r = seg.region
        return {
            "type": "visual_region",
            "row": r.row,
            "col": r.col,
            "span": r.span,
            "bbox": list(r.bbox),
            "vokens": list(seg.vokens),
        }
    raise ContractError(f"unknown segment type {type(seg)!r}")


def encode_context(ctx: GenerationContext) -> list[dict]:
    return [encode_segment(s) for s in ctx.segments]


def decode_segment(obj: dict, grid: GridSpec) -> Segment:
    kind = obj.get("type")
    if kind == "text":
        return TextSegment(tokens=tuple(int(t) for t in obj["tokens"]))
    if kind == "visual_base":
        mask = None
        if "mask" in obj:
            cells = np.array(obj["mask"], dtype=bool)
            mask = RegionMask(spec=grid, cells=cells)
        return VisualBaseSegment(image=obj["image"], n_patches=grid.n_cells, mask=mask)
    if kind == "visual_region":
        region = Region(
            row=int(obj["row"]), col=int(obj["col"]), span=int(obj["span"]),
            bbox=tuple(int(v) for v in obj["bbox"]),
        )
        return RegionSegment(region=region, vokens=tuple(int(t) for t in obj["vokens"]))
    raise ContractError(f"unknown wire segment type {kind!r}")


def decode_context(objs: list[dict], grid: GridSpec) -> GenerationContext:
    return GenerationContext(segments=tuple(decode_segment(o, grid) for o in objs))


def context_signature(ctx: GenerationContext) -> bytes:
    """Canonical bytes of a context; the simulated model's noise source."""
    return dumps(encode_context(ctx)).encode("utf-8")

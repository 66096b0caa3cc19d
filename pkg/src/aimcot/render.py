"""SVG overlays of grid lines and the regions a trace selected.

Per insertion, selected regions are colored by rank: red, purple, blue,
then the documented cycle orange, green, teal, magenta, brown. Each
rectangle carries a small source badge ("attn" or "exp"). Rectangle
coordinates are the regions' exact pixel bboxes.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

from .geometry import GridSpec
from .trace import TraceRecord

RANK_PALETTE = [
    "#d62728",  # red
    "#9467bd",  # purple
    "#1f77b4",  # blue
    "#ff7f0e",  # orange
    "#2ca02c",  # green
    "#17becf",  # teal
    "#e377c2",  # magenta
    "#8c564b",  # brown
]

_SOURCE_BADGE = {"attention": "attn", "exploratory": "exp"}


def render_trace_svg(record: TraceRecord) -> str:
    """Vector overlay for one trace: grid plus color-ranked selections."""
    cfg = record.header["config"]
    backend = record.header.get("backend", {})
    sim_spec = backend.get("spec", {})
    grid_info = sim_spec.get("grid", {})
    width = int(grid_info.get("image_w", cfg["grid.s_g"] * 16))
    height = int(grid_info.get("image_h", width))
    spec = GridSpec(
        s_g=cfg["grid.s_g"], image_w=width, image_h=height, s_r=cfg["grid.s_r"]
    )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f"<!-- question: {escape(record.header.get('question', ''))} -->",
    ]
    for i in range(spec.s_g):
        for j in range(spec.s_g):
            x0, y0, x1, y1 = spec.cell_bbox(i, j)
            parts.append(
                f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
                f'fill="none" stroke="#cccccc" stroke-width="0.5"/>'
            )
    for ins_index, ins in enumerate(record.insertions()):
        for rank, (region, source) in enumerate(zip(ins["regions"], ins["sources"])):
            color = RANK_PALETTE[rank % len(RANK_PALETTE)]
            x0, y0, x1, y1 = region["bbox"]
            parts.append(
                f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
                f'fill="{color}" fill-opacity="0.25" stroke="{color}" '
                f'stroke-width="1.5" data-insertion="{ins_index}" data-rank="{rank}"/>'
            )
            badge = _SOURCE_BADGE.get(source, source)
            parts.append(
                f'<text x="{x0 + 1}" y="{y0 + 6}" font-size="5" '
                f'fill="{color}">{escape(badge)}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts)

"""Minimal stdio backend for protocol tests: wraps the in-process sim.

Speaks the line-delimited wire protocol; describe() echoes the rendered
prompt back (a conformance fixture), everything else delegates to the
simulated model. Run with ``python stub_backend.py [--spec FILE]``.
"""

from __future__ import annotations

import argparse
import json
import sys

from aimcot.backend.sim import SimOracleSpec, SimulatedBackend, default_spec
from aimcot.backend import wire
from aimcot.errors import AimcotError
from aimcot.geometry import Region


def reply(obj: dict) -> None:
    sys.stdout.write(wire.dumps(obj) + "\n")
    sys.stdout.flush()


def region_from_bbox(backend: SimulatedBackend, bbox: list[int]) -> Region:
    grid = backend.info.grid
    x0, y0, x1, y1 = bbox
    cells = [
        (r, c)
        for r in range(grid.s_g)
        for c in range(grid.s_g)
        if (lambda b: b[0] >= x0 and b[1] >= y0 and b[2] <= x1 and b[3] <= y1)(
            grid.cell_bbox(r, c)
        )
    ]
    if not cells:
        raise AimcotError("bbox covers no cells")
    rows = [r for r, _ in cells]
    cols = [c for _, c in cells]
    span = max(rows) - min(rows) + 1
    return Region(row=min(rows), col=min(cols), span=span, bbox=tuple(bbox))


def step_payload(result) -> dict:
    return {
        "probs": [float(p) for p in result.distribution.probs],
        "attention": [[float(v) for v in row] for row in result.attention.per_layer],
        "visual_indices": list(result.attention.visual_index_set),
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--spec")
    parser.add_argument("--fail-after", type=int, default=-1,
                        help="start erroring on evaluate after N requests")
    args = parser.parse_args()
    if args.spec:
        spec = SimOracleSpec.from_dict(json.loads(open(args.spec).read()))
    else:
        spec = default_spec()
    backend = SimulatedBackend(spec)
    grid = backend.info.grid
    initialized = False
    evaluations = 0

    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            reply({"id": None, "error": {"code": "bad_request", "message": "not JSON"}})
            continue
        mid = msg.get("id")
        op = msg.get("op")
        try:
            if op == "init":
                initialized = True
                info = backend.info
                reply({
                    "id": mid, "ok": True, "v_sub": info.v_sub,
                    "vocab_size": info.vocab_size, "n_layers": info.n_layers,
                    "eos_id": info.eos_id, "newline_id": info.newline_id,
                    "grid_s_g": grid.s_g, "grid_s_r": grid.s_r,
                    "image_w": grid.image_w, "image_h": grid.image_h,
                })
                continue
            if not initialized:
                reply({"id": mid, "error": {"code": "not_initialized",
                                            "message": "first message must be init"}})
                continue
            if op == "evaluate":
                evaluations += 1
                if 0 <= args.fail_after < evaluations:
                    reply({"id": mid, "error": {"code": "backend_failure",
                                                "message": "synthetic failure"}})
                    continue
                ctx = wire.decode_context(msg["segments"], grid)
                reply({"id": mid, "ok": True, **step_payload(backend.evaluate(ctx))})
            elif op == "evaluate_batch":
                base = wire.decode_context(msg["base"], grid)
                results = []
                for suffix in msg["suffixes"]:
                    seg = wire.decode_segment(suffix[0], grid)
                    results.append(step_payload(backend.evaluate(base.with_region(seg))))
                reply({"id": mid, "ok": True, "results": results})
            elif op == "embed_region":
                region = region_from_bbox(backend, msg["bbox"])
                vokens = backend.embed_region(msg["image"], region)
                reply({"id": mid, "ok": True, "vokens": list(vokens)})
            elif op == "describe":
                reply({"id": mid, "ok": True, "text": msg["prompt"]})
            elif op == "encode":
                reply({"id": mid, "ok": True, "tokens": list(backend.encode(msg["text"]))})
            elif op == "decode":
                reply({"id": mid, "ok": True, "text": backend.decode(msg["tokens"])})
            else:
                reply({"id": mid, "error": {"code": "unknown_op",
                                            "message": f"unknown op {op!r}"}})
        except (AimcotError, KeyError, ValueError, TypeError) as exc:
            reply({"id": mid, "error": {"code": "bad_request", "message": str(exc)}})


if __name__ == "__main__":
    main()

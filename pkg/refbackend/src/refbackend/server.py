"""Stdio request loop speaking the line-delimited wire protocol.

One JSON object per line in, one per line out; ids round-trip unchanged
and replies keep request order. The first message must be
``init``; anything else gets a ``not_initialized`` error but the loop
keeps serving. Malformed lines produce ``bad_request`` errors instead of
dropping the connection.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import IO

from .toymodel import ToyModel, ToyModelError, ToySpec

PROTOCOL_VERSION = 1


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _error(mid, code: str, message: str) -> dict:
    return {"id": mid, "error": {"code": code, "message": message}}


class BackendSession:
    """One connection's state: declared constants plus the toy model."""

    def __init__(self, spec: ToySpec):
        self.model = ToyModel(spec)
        self.initialized = False

    def handle(self, msg: dict) -> dict:
        mid = msg.get("id")
        op = msg.get("op")
        if op == "init":
            self.initialized = True
            spec = self.model.spec
            return {
                "id": mid,
                "ok": True,
                "v_sub": spec.s_r * spec.s_r,
                "vocab_size": spec.vocab_size,
                "n_layers": spec.n_layers,
                "eos_id": self.model.eos_id,
                "newline_id": 10,
                "grid_s_g": spec.s_g,
                "grid_s_r": spec.s_r,
                "image_w": spec.image_w,
                "image_h": spec.image_h,
            }
        if not self.initialized:
            return _error(mid, "not_initialized", "first message must be init")
        try:
            if op == "evaluate":
                return {"id": mid, "ok": True, **self.model.evaluate(msg["segments"])}
            if op == "evaluate_batch":
                base = msg["base"]
                results = [
                    self.model.evaluate(base + suffix) for suffix in msg["suffixes"]
                ]
                return {"id": mid, "ok": True, "results": results}
            if op == "embed_region":
                return {"id": mid, "ok": True,
                        "vokens": self.model.embed_bbox(msg["bbox"])}
            if op == "describe":
                if "prompt" not in msg:
                    return _error(mid, "bad_request", "describe needs a prompt")
                return {"id": mid, "ok": True, "text": self.model.describe()}
            if op == "encode":
                return {"id": mid, "ok": True, "tokens": self.model.encode(msg["text"])}
            if op == "decode":
                return {"id": mid, "ok": True, "text": self.model.decode(msg["tokens"])}
            return _error(mid, "unknown_op", f"unknown op {op!r}")
        except ToyModelError as exc:
            return _error(mid, "bad_region" if op == "embed_region" else "bad_request",
                          str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return _error(mid, "bad_request", f"malformed {op} request: {exc}")


def serve(spec: ToySpec, stdin: IO[str], stdout: IO[str]) -> None:
    """Answer requests until end-of-input."""
    session = BackendSession(spec)
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = _error(None, "bad_request", f"line is not JSON: {exc}")
        else:
            reply = session.handle(msg)
        stdout.write(_dumps(reply) + "\n")
        stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="refbackend",
        description="Reference wire-protocol backend with a deterministic toy model",
    )
    parser.add_argument("--spec", required=True, help="toy-model spec JSON file")
    args = parser.parse_args(argv)
    with open(args.spec, encoding="utf-8") as fh:
        spec = ToySpec.from_dict(json.load(fh))
    serve(spec, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())

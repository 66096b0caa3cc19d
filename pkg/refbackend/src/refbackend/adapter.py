"""Skeleton for serving a real vision-language model behind the protocol.

The toy model in :mod:`refbackend.toymodel` fills the same five holes this
adapter declares; to serve an actual inference stack, subclass
:class:`InferenceAdapter` and wire it through :func:`serve_adapter`. No
model weights ship with this package; everything here runs offline.

Hook points, in the order a generation exercises them:

1. ``constants``      -- report vocabulary size, vokens per region,
                         attention layers exposed, end-of-response id, grid.
2. ``encode/decode``  -- the model's tokenizer.
3. ``evaluate``       -- one decoding step: given the interleaved segment
                         list, return the next-token distribution and the
                         head-averaged attention rows of the last
                         ``n_layers`` layers over the full context, plus
                         the positions of visual tokens. Reuse your KV
                         cache across the shared prefix when serving
                         ``evaluate_batch``.
4. ``embed_region``   -- crop the image pixels to the bbox and run the
                         vision pathway; return exactly ``v_sub`` token ids.
5. ``describe``       -- run the model over (image, prompt) and return the
                         generated description text.
"""

from __future__ import annotations

import json
from typing import IO

from .server import _dumps, _error


class InferenceAdapter:
    """Subclass and implement every method; see the module docstring."""

    def constants(self) -> dict:
        """Return the init-reply fields (v_sub, vocab_size, n_layers,
        eos_id, newline_id, grid_s_g, grid_s_r, image_w, image_h)."""
        raise NotImplementedError

    def encode(self, text: str) -> list[int]:
        raise NotImplementedError

    def decode(self, tokens: list[int]) -> str:
        raise NotImplementedError

    def evaluate(self, segments: list[dict]) -> dict:
        """Return {"probs": [...], "attention": [[...] per layer],
        "visual_indices": [...]} for the next-token position."""
        raise NotImplementedError

    def embed_region(self, image: str, bbox: list[int]) -> list[int]:
        raise NotImplementedError

    def describe(self, image: str, prompt: str) -> str:
        raise NotImplementedError


def serve_adapter(adapter: InferenceAdapter, stdin: IO[str], stdout: IO[str]) -> None:
    """Protocol loop around an adapter; mirrors the toy-model server."""
    initialized = False
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            stdout.write(_dumps(_error(None, "bad_request", str(exc))) + "\n")
            stdout.flush()
            continue
        mid = msg.get("id")
        op = msg.get("op")
        try:
            if op == "init":
                initialized = True
                reply = {"id": mid, "ok": True, **adapter.constants()}
            elif not initialized:
                reply = _error(mid, "not_initialized", "first message must be init")
            elif op == "evaluate":
                reply = {"id": mid, "ok": True, **adapter.evaluate(msg["segments"])}
            elif op == "evaluate_batch":
                results = [
                    adapter.evaluate(msg["base"] + suffix)
                    for suffix in msg["suffixes"]
                ]
                reply = {"id": mid, "ok": True, "results": results}
            elif op == "embed_region":
                reply = {"id": mid, "ok": True,
                         "vokens": adapter.embed_region(msg["image"], msg["bbox"])}
            elif op == "describe":
                reply = {"id": mid, "ok": True,
                         "text": adapter.describe(msg["image"], msg["prompt"])}
            elif op == "encode":
                reply = {"id": mid, "ok": True, "tokens": adapter.encode(msg["text"])}
            elif op == "decode":
                reply = {"id": mid, "ok": True, "text": adapter.decode(msg["tokens"])}
            else:
                reply = _error(mid, "unknown_op", f"unknown op {op!r}")
        except NotImplementedError:
            reply = _error(mid, "not_implemented", f"adapter does not serve {op}")
        except (KeyError, TypeError, ValueError) as exc:
            reply = _error(mid, "bad_request", str(exc))
        stdout.write(_dumps(reply) + "\n")
        stdout.flush()

"""Wire-protocol client driving an external backend over its stdio.

Spawns the backend command as a child process and exchanges one JSON
message per line (see :mod:`aimcot.backend.wire` for the format). The
first request is always ``init``; the reply declares the backend's
constants. Error replies and transport failures surface as
:class:`~aimcot.errors.BackendError` carrying the request id.
"""

from __future__ import annotations

import json
import subprocess

import numpy as np

from ..attention import AttentionSnapshot
from ..errors import BackendError, TemplateError
from ..geometry import GridSpec, Region
from . import wire
from .base import (
    BackendInfo,
    GenerationContext,
    RegionSegment,
    StepResult,
    TokenDistribution,
)


class ProcessBackend:
    """One generation stream per instance; requests strictly in order."""

    def __init__(self, command: list[str]):
        self.command = command
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start backend {command!r}: {exc}") from exc
        self._next_id = 0
        self._info = self._init()

    # -- transport -----------------------------------------------------------

    def _call(self, op: str, **fields) -> dict:
        request_id = self._next_id
        self._next_id += 1
        message = {"id": request_id, "op": op, **fields}
        try:
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._proc.stdin.write(wire.dumps(message) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise BackendError(f"transport failure on {op}: {exc}", request_id=request_id) from exc
        if not line:
            raise BackendError(f"backend closed the stream during {op}", request_id=request_id)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendError(f"unparseable reply to {op}: {exc}", request_id=request_id) from exc
        if reply.get("id") != request_id:
            raise BackendError(
                f"reply id {reply.get('id')!r} does not match request", request_id=request_id
            )
        if "error" in reply:
            err = reply["error"] or {}
            raise BackendError(
                f"backend error {err.get('code', 'unknown')}: {err.get('message', '')}",
                request_id=request_id,
            )
        if not reply.get("ok"):
            raise BackendError(f"malformed reply to {op}", request_id=request_id)
        return reply

    def _init(self) -> BackendInfo:
        reply = self._call("init", config={"protocol": wire.PROTOCOL_VERSION})
        try:
            grid = GridSpec(
                s_g=int(reply["grid_s_g"]),
                image_w=int(reply["image_w"]),
                image_h=int(reply["image_h"]),
                s_r=int(reply["grid_s_r"]),
            )
            return BackendInfo(
                v_sub=int(reply["v_sub"]),
                vocab_size=int(reply["vocab_size"]),
                n_layers=int(reply["n_layers"]),
                eos_id=int(reply["eos_id"]),
                newline_id=int(reply["newline_id"]),
                grid=grid,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"init reply missing constants: {exc}") from exc

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()

    def __enter__(self) -> "ProcessBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- StepBackend surface ---------------------------------------------------

    @property
    def info(self) -> BackendInfo:
        return self._info

    def _result(self, payload: dict) -> StepResult:
        probs = np.asarray(payload["probs"], dtype=float)
        rows = tuple(np.asarray(r, dtype=float) for r in payload["attention"])
        snapshot = AttentionSnapshot(
            per_layer=rows,
            context_len=len(rows[0]) if rows else 0,
            visual_index_set=tuple(int(i) for i in payload["visual_indices"]),
        )
        return StepResult(distribution=TokenDistribution(probs=probs), attention=snapshot)

    def evaluate(self, ctx: GenerationContext) -> StepResult:
        reply = self._call("evaluate", segments=wire.encode_context(ctx))
        return self._result(reply)

    def evaluate_batch(
        self, base: GenerationContext, suffixes: list[RegionSegment]
    ) -> list[StepResult]:
        if not suffixes:
            return []
        reply = self._call(
            "evaluate_batch",
            base=wire.encode_context(base),
            suffixes=[[wire.encode_segment(s)] for s in suffixes],
        )
        return [self._result(r) for r in reply["results"]]

    def embed_region(self, image: str, region: Region) -> tuple[int, ...]:
        reply = self._call("embed_region", image=image, bbox=list(region.bbox))
        return tuple(int(t) for t in reply["vokens"])

    def describe(self, image: str, question: str, prompt_template: str) -> str:
        if "{question}" not in prompt_template:
            raise TemplateError("prompt template must contain the {question} placeholder")
        prompt = prompt_template.replace("{question}", question)
        reply = self._call("describe", image=image, prompt=prompt)
        return str(reply["text"])

    def encode(self, text: str) -> tuple[int, ...]:
        reply = self._call("encode", text=text)
        return tuple(int(t) for t in reply["tokens"])

    def decode(self, ids) -> str:
        reply = self._call("decode", tokens=[int(t) for t in ids])
        return str(reply["text"])

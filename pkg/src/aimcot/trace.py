"""Trace files: one JSON record per line, schema-versioned.

A trace is a header record, one record per generated token, and a summary
record, in that order. Serialization is canonical (sorted keys, fixed
separators) so identical runs produce byte-identical files. Non-finite
thresholds serialize the way Python's json module writes them.

Header:  {"kind": "header", "trace_version": 1, "question_id", "question",
          "image", "x_prime", "separator", "cag": {...}, "config": {...},
          "backend": {...}, "mask_top_k"}
Token:   {"kind": "token", "index", "token", "text", "a_visual", "delta",
          "fired", "insertion": null | {"regions": [{"row","col","span","bbox"}],
          "sources": [...], "gains": [...], "backend_calls"}}
Summary: {"kind": "summary", "response", "tokens", "insertions",
          "fire_count", "p_exp", "backend_call_totals", "error"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .stats import ResponseShifts

TRACE_VERSION = 1


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TraceRecord:
    """Parsed trace: header, per-token entries, summary."""

    header: dict
    tokens: list[dict]
    summary: dict

    @property
    def question_id(self) -> str:
        return self.header["question_id"]

    @property
    def response(self) -> str:
        return self.summary["response"]

    @property
    def p_exp(self) -> float | None:
        return self.summary["p_exp"]

    def insertions(self) -> list[dict]:
        return [t["insertion"] for t in self.tokens if t["insertion"] is not None]

    def to_lines(self) -> list[str]:
        return (
            [_dumps(self.header)]
            + [_dumps(t) for t in self.tokens]
            + [_dumps(self.summary)]
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(("\n".join(self.to_lines()) + "\n").encode("utf-8"))

    def shifts(self) -> ResponseShifts:
        """The view the trace-corpus statistics consume."""
        series = [t["delta"] for t in self.tokens if t["delta"] is not None]
        insertion_shifts = [
            t["delta"] for t in self.tokens if t["insertion"] is not None
        ]
        return ResponseShifts(
            question_id=self.question_id,
            shift_series=tuple(series),
            insertion_shifts=tuple(insertion_shifts),
        )


def parse_trace_lines(lines: list[str]) -> TraceRecord:
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"trace line {lineno} is not valid JSON: {exc}") from exc
    if len(records) < 2:
        raise DataError("trace needs at least a header and a summary record")
    header, *body = records
    if header.get("kind") != "header":
        raise DataError("first trace record must be the header")
    if header.get("trace_version") != TRACE_VERSION:
        raise DataError(f"unsupported trace version {header.get('trace_version')!r}")
    summary = body[-1]
    if summary.get("kind") != "summary":
        raise DataError("last trace record must be the summary")
    tokens = body[:-1]
    prev = -1
    for t in tokens:
        if t.get("kind") != "token":
            raise DataError(f"unexpected trace record kind {t.get('kind')!r}")
        if t["index"] <= prev:
            raise DataError("token records out of order")
        prev = t["index"]
    return TraceRecord(header=header, tokens=tokens, summary=summary)


def read_trace(path: str | Path) -> TraceRecord:
    p = Path(path)
    if not p.exists():
        raise DataError(f"trace file not found: {p}")
    return parse_trace_lines(p.read_text(encoding="utf-8").splitlines())

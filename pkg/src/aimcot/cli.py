"""Operator command line: a thin client of the HTTP service.

Without ``--server`` the service app runs in-process; with it, requests
go to a remote instance. Exit codes: 0 success, 2 configuration or usage
problem, 3 backend failure, 4 insufficient or degenerate data.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

from .config import DEFAULT_IMAGE, DEFAULT_QUESTION, resolve_flat
from .errors import ConfigError

_EXIT_BY_CODE = {"config_error": 2, "backend_error": 3, "data_error": 4}


class ServiceClient:
    """POSTs to the in-process app or a remote server, same surface."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient

            from .service.app import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        response = self._client.post(path, json=payload)
        return response.status_code, response.json()


def _call(
    client: ServiceClient, path: str, payload: dict, partial_dir: Path | None = None
) -> dict:
    status, body = client.post(path, payload)
    if status == 200:
        return body
    error = body.get("error", {}) if isinstance(body, dict) else {}
    message = error.get("message") or json.dumps(body)
    print(f"error: {message}", file=sys.stderr)
    if isinstance(body, dict) and body.get("trace_lines"):
        partial = (partial_dir or Path.cwd()) / "partial-trace.jsonl"
        partial.write_text("\n".join(body["trace_lines"]) + "\n", encoding="utf-8")
        print(f"partial trace written to {partial}", file=sys.stderr)
    raise SystemExit(_EXIT_BY_CODE.get(error.get("code", ""), 1))


def _resolved_config(args) -> dict[str, Any]:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    flat = resolve_flat(
        config_path=args.config, environ=os.environ, overrides=overrides
    )
    # JSON transport cannot carry non-finite floats; the service re-parses
    return {
        k: (str(v) if isinstance(v, float) and not math.isfinite(v) else v)
        for k, v in flat.items()
    }


def _backend_params(args) -> dict:
    spec = None
    if args.sim_spec:
        path = Path(args.sim_spec)
        if not path.exists():
            raise ConfigError(f"simulated-model spec not found: {path}")
        spec = json.loads(path.read_text(encoding="utf-8"))
    raw = args.backend
    if raw == "sim":
        return {"kind": "sim", "sim_spec": spec}
    if raw.startswith("exec:"):
        command = raw[len("exec:"):]
        if not command:
            raise ConfigError("exec backend needs a command after 'exec:'")
        return {"kind": "exec", "command": command}
    raise ConfigError(f"unknown backend {raw!r}; use 'sim' or 'exec:CMD'")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [
        max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
        for i, h in enumerate(headers)
    ]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("-" * len(line))
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def _fmt(value, digits=4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    client = ServiceClient(args.server)
    payload = {
        "question": args.question,
        "image": args.image,
        "qid": args.qid,
        "config": _resolved_config(args),
        "backend": _backend_params(args),
        "mask_top_k": args.mask_topk,
    }
    out = _out_dir(args)
    body = _call(client, "/v1/generate", payload, partial_dir=out)
    trace_path = out / f"trace-{args.qid}.jsonl"
    trace_path.write_bytes(("\n".join(body["trace_lines"]) + "\n").encode("utf-8"))
    print(body["response_text"])
    print(
        f"[trace {trace_path}] tokens={len(body['trace_lines']) - 2} "
        f"insertions={body['insertions']} fires={body['fire_count']} "
        f"p_exp={_fmt(body['p_exp'])}",
        file=sys.stderr,
    )
    return 0


def cmd_ablate(args) -> int:
    modes = [m for m in (args.modes or "").split(",") if m]
    if not modes:
        print("error: --modes must name at least one mode", file=sys.stderr)
        return 2
    client = ServiceClient(args.server)
    payload = {
        "modes": modes,
        "runs": args.runs,
        "base_seed": args.base_seed,
        "config": _resolved_config(args),
        "backend": _backend_params(args),
    }
    body = _call(client, "/v1/ablate", payload)
    rows = body["rows"]
    _print_table(
        ["mode", "cag", "selection", "trigger", "runs", "recall", "insertions", "p_exp"],
        [
            [
                r["mode"], "on" if r["cag"] else "off", r["selection"], r["trigger"],
                str(r["runs"]), _fmt(r["mean_recall"]), _fmt(r["mean_insertions"], 2),
                _fmt(r["mean_p_exp"]),
            ]
            for r in rows
        ],
    )
    (_out_dir(args) / "ablate.json").write_text(
        json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def cmd_analyze(args) -> int:
    trace_paths: list[str] = []
    for pattern in args.traces:
        matched = sorted(glob.glob(pattern))
        trace_paths.extend(matched if matched else [pattern])
    missing = [p for p in trace_paths if not Path(p).exists()]
    if missing:
        print(f"error: trace file not found: {missing[0]}", file=sys.stderr)
        return 2
    scores_path = Path(args.scores)
    if not scores_path.exists():
        print(f"error: score file not found: {scores_path}", file=sys.stderr)
        return 2
    client = ServiceClient(args.server)
    payload = {
        "traces": [
            Path(p).read_text(encoding="utf-8").splitlines() for p in trace_paths
        ],
        "scores_text": scores_path.read_text(encoding="utf-8"),
        "quantile": args.quantile,
        "t_variant": args.t_variant,
    }
    body = _call(client, "/v1/analyze", payload)
    print(
        f"synchronized-insertion correlation: r={body['pearson_r']:.4f} "
        f"p={body['pearson_p']:.4g} over {body['n_used']} responses "
        f"({body['n_excluded_zero_insertion']} without insertions excluded)"
    )
    if body["group"]:
        g = body["group"]
        print(
            f"group comparison: mean_high={g['mean_high']:.4f} "
            f"mean_low={g['mean_low']:.4f} t={_fmt(g['t_stat'])} p={g['p_value']:.4g} "
            f"(n={g['n_high']}/{g['n_low']})"
        )
    else:
        print(f"group comparison: skipped ({body['metadata']['group_note']})")
    print(f"exploratory-selection share: {_fmt(body['p_exp_mean'])}")
    if args.json:
        Path(args.json).write_text(
            json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_submod_probe(args) -> int:
    k_smalls = [int(v) for v in args.k_small.split(",") if v]
    client = ServiceClient(args.server)
    payload = {
        "n_probes": args.n,
        "k_small": k_smalls,
        "base_seed": args.base_seed,
        "config": _resolved_config(args),
        "backend": _backend_params(args),
    }
    body = _call(client, "/v1/submod-probe", payload)
    rows = body["rows"]
    _print_table(
        ["k_small"] + [str(r["k_small"]) for r in rows],
        [
            [f"holds (n={rows[0]['n']})"] + [f"{100 * r['proportion']:.2f}%" for r in rows],
            ["p-value"] + [f"{r['p_value']:.4g}" for r in rows],
        ],
    )
    if args.json:
        Path(args.json).write_text(
            json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_render(args) -> int:
    trace_path = Path(args.trace)
    if not trace_path.exists():
        print(f"error: trace file not found: {trace_path}", file=sys.stderr)
        return 2
    client = ServiceClient(args.server)
    payload = {"trace_lines": trace_path.read_text(encoding="utf-8").splitlines()}
    body = _call(client, "/v1/render", payload)
    svg_path = Path(args.svg_out) if args.svg_out else trace_path.with_suffix(".svg")
    svg_path.write_text(body["svg"] + "\n", encoding="utf-8")
    print(f"overlay written to {svg_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# -- argument wiring ----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, backend: bool = True) -> None:
    parser.add_argument("--server", help="remote service URL (default: in-process)")
    if backend:
        parser.add_argument("--config", help="flat dotted-key config file")
        parser.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="config override, repeatable, applied after file and env",
        )
        parser.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        parser.add_argument(
            "--backend", default="sim", help="'sim' or 'exec:COMMAND'"
        )
        parser.add_argument("--sim-spec", help="simulated-model spec JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aimcot",
        description="Information-gain driven interleaved reasoning runs and analyses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run one generation and write its trace")
    _add_common(p)
    p.add_argument("--question", default=DEFAULT_QUESTION)
    p.add_argument("--image", default=DEFAULT_IMAGE)
    p.add_argument("--qid", default="q0")
    p.add_argument("--mask-topk", type=int, default=0,
                   help="blank the top-N saliency cells before generating")
    p.add_argument("--out", default=".", help="output directory for the trace")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ablate", help="run the component ablation matrix")
    _add_common(p)
    p.add_argument("--modes", required=True,
                   help="comma list: aimcot,wo_cag,wo_avp,wo_dat or 'all'")
    p.add_argument("--runs", type=int, default=16)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory for ablate.json")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="trace-corpus statistics")
    _add_common(p, backend=False)
    p.add_argument("--traces", nargs="+", required=True, help="trace files or globs")
    p.add_argument("--scores", required=True, help="question_id<TAB>score file")
    p.add_argument("--quantile", type=float, default=0.8)
    p.add_argument("--t-variant", choices=["student", "welch"], default="student")
    p.add_argument("--json", help="also write the machine-readable report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("submod-probe", help="diminishing-returns probe batch")
    _add_common(p)
    p.add_argument("--n", type=int, default=60, help="probes per k_small")
    p.add_argument("--k-small", default="2,3,4,5")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--json", help="also write the rows here")
    p.set_defaults(func=cmd_submod_probe)

    p = sub.add_parser("render", help="SVG overlay of a trace's selections")
    _add_common(p, backend=False)
    p.add_argument("--trace", required=True)
    p.add_argument("--svg-out")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())

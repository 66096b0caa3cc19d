"""FastAPI service wrapping the engine.

Every request builds its own backend instance (simulated in-process, or a
subprocess speaking the wire protocol), so requests never share a
generation stream. Engine errors map onto a stable error body::

    {"error": {"code": "config_error" | "backend_error" | "data_error",
               "message": ...}, "trace_lines": [...]?}

with HTTP 400 / 502 / 422 respectively; ``trace_lines`` carries the
partial trace when a backend died mid-generation.
"""

from __future__ import annotations

import contextlib
import shlex
from typing import Iterator

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..backend import ProcessBackend, SimulatedBackend, StepBackend
from ..backend.sim import SimOracleSpec, default_spec
from ..config import RunConfig
from ..errors import (
    AimcotError,
    BackendError,
    ConfigError,
    ContractError,
    DataError,
)
from ..experiments import (
    ablation_matrix,
    mask_degradation_sweep,
    submod_probe_batch,
)
from ..orchestrator import generate, mask_probe
from ..render import render_trace_svg
from ..stats import group_analysis, parse_scores, synchronized_insertion_analysis
from ..trace import parse_trace_lines
from . import schemas


def _error_response(code: str, status: int, message: str, trace_lines=None):
    body = {"error": {"code": code, "message": message}}
    if trace_lines is not None:
        body["trace_lines"] = trace_lines
    return JSONResponse(status_code=status, content=body)


def _sim_spec(params: schemas.BackendParams) -> SimOracleSpec:
    if params.sim_spec is None:
        return default_spec()
    try:
        return SimOracleSpec.from_dict(params.sim_spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulated-model spec: {exc}") from exc


@contextlib.contextmanager
def _open_backend(params: schemas.BackendParams) -> Iterator[tuple[StepBackend, dict]]:
    if params.kind == "sim":
        spec = _sim_spec(params)
        yield SimulatedBackend(spec), {"kind": "sim", "spec": spec.to_dict()}
    else:
        if not params.command:
            raise ConfigError("exec backend needs a command")
        backend = ProcessBackend(shlex.split(params.command))
        try:
            yield backend, {"kind": "exec", "command": params.command}
        finally:
            backend.close()


def _run_config(flat: dict) -> RunConfig:
    return RunConfig.from_flat(flat)


def _require_sim(params: schemas.BackendParams, what: str) -> SimOracleSpec:
    if params.kind != "sim":
        raise ConfigError(f"{what} needs the simulated backend (planted evidence)")
    return _sim_spec(params)


def create_app() -> FastAPI:
    app = FastAPI(title="aimcot", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc: ConfigError):
        return _error_response("config_error", 400, str(exc))

    @app.exception_handler(DataError)
    async def _data_error(request, exc: DataError):
        return _error_response("data_error", 422, str(exc))

    @app.exception_handler(BackendError)
    async def _backend_error(request, exc: BackendError):
        partial = getattr(exc, "partial", None)
        lines = partial.record.to_lines() if partial is not None else None
        return _error_response("backend_error", 502, str(exc), trace_lines=lines)

    @app.exception_handler(AimcotError)
    async def _engine_error(request, exc: AimcotError):
        # remaining engine errors are misuses of the API surface
        return _error_response("config_error", 400, str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/generate", response_model=schemas.GenerateResponse)
    def generate_endpoint(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        cfg = _run_config(req.config)
        with _open_backend(req.backend) as (backend, descriptor):
            if req.mask_top_k > 0:
                outcome = mask_probe(
                    req.question, req.image, req.mask_top_k, cfg, backend,
                    qid=req.qid, backend_descriptor=descriptor,
                )
            else:
                outcome = generate(
                    req.question, req.image, cfg, backend,
                    qid=req.qid, backend_descriptor=descriptor,
                )
        return schemas.GenerateResponse(
            qid=req.qid,
            response_text=outcome.response,
            trace_lines=outcome.record.to_lines(),
            insertions=outcome.insertions,
            fire_count=outcome.fire_count,
            p_exp=outcome.p_exp,
            backend_calls=outcome.call_totals,
        )

    @app.post("/v1/ablate", response_model=schemas.AblateResponse)
    def ablate_endpoint(req: schemas.AblateRequest) -> schemas.AblateResponse:
        spec = _require_sim(req.backend, "ablation")
        cfg = _run_config(req.config)
        rows = ablation_matrix(spec, cfg, req.modes, req.runs, base_seed=req.base_seed)
        return schemas.AblateResponse(
            rows=[schemas.AblateRow(**row.__dict__) for row in rows]
        )

    @app.post("/v1/analyze", response_model=schemas.AnalyzeResponse)
    def analyze_endpoint(req: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
        records = [parse_trace_lines(lines) for lines in req.traces]
        scores = parse_scores(req.scores_text)
        responses = [r.shifts() for r in records]
        pairs, r, p, excluded = synchronized_insertion_analysis(
            responses, scores, quantile_q=req.quantile
        )
        group = None
        group_note = "group analysis needs at least 7 scored responses"
        if len(pairs) >= 7:
            report = group_analysis(pairs, variant=req.t_variant)
            group = schemas.GroupReportModel(**report.__dict__)
            group_note = f"t-test variant: {req.t_variant}, two-sided"
        p_exps = [rec.p_exp for rec in records if rec.p_exp is not None]
        return schemas.AnalyzeResponse(
            pearson_r=r,
            pearson_p=p,
            n_used=len(pairs),
            n_excluded_zero_insertion=excluded,
            group=group,
            p_exp_mean=sum(p_exps) / len(p_exps) if p_exps else None,
            metadata={
                "quantile": req.quantile,
                "pearson_sidedness": "two-sided",
                "group_note": group_note,
                "p_exp_per_trace": {
                    rec.question_id: rec.p_exp for rec in records
                },
            },
        )

    @app.post("/v1/submod-probe", response_model=schemas.SubmodProbeResponse)
    def submod_endpoint(req: schemas.SubmodProbeRequest) -> schemas.SubmodProbeResponse:
        spec = _require_sim(req.backend, "the diminishing-returns probe")
        cfg = _run_config(req.config)
        rows = submod_probe_batch(
            spec, cfg, req.n_probes, req.k_small, base_seed=req.base_seed
        )
        return schemas.SubmodProbeResponse(
            rows=[schemas.SubmodProbeRow(**row.__dict__) for row in rows]
        )

    @app.post("/v1/mask-sweep", response_model=schemas.MaskSweepResponse)
    def mask_sweep_endpoint(req: schemas.MaskSweepRequest) -> schemas.MaskSweepResponse:
        spec = _require_sim(req.backend, "the masking sweep")
        cfg = _run_config(req.config)
        rows = mask_degradation_sweep(
            spec, cfg, req.k_masks,
            seeds=[req.base_seed + i for i in range(req.runs)],
        )
        return schemas.MaskSweepResponse(
            rows=[schemas.MaskSweepRow(**row.__dict__) for row in rows]
        )

    @app.post("/v1/render", response_model=schemas.RenderResponse)
    def render_endpoint(req: schemas.RenderRequest) -> schemas.RenderResponse:
        record = parse_trace_lines(req.trace_lines)
        try:
            svg = render_trace_svg(record)
        except (KeyError, TypeError) as exc:
            raise ContractError(f"trace is missing render fields: {exc}") from exc
        return schemas.RenderResponse(svg=svg)

    return app


app = create_app()

"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

from ..config import DEFAULT_IMAGE, DEFAULT_QUESTION


class BackendParams(BaseModel):
    """Which model backend to drive: in-process simulated or a subprocess."""

    kind: Literal["sim", "exec"] = "sim"
    sim_spec: dict[str, Any] | None = None
    command: str | None = None


class GenerateRequest(BaseModel):
    question: str = DEFAULT_QUESTION
    image: str = DEFAULT_IMAGE
    qid: str = "q0"
    config: dict[str, Any] = Field(default_factory=dict)
    backend: BackendParams = Field(default_factory=BackendParams)
    mask_top_k: int = 0


class GenerateResponse(BaseModel):
    qid: str
    response_text: str
    trace_lines: list[str]
    insertions: int
    fire_count: int
    p_exp: float | None
    backend_calls: dict[str, int]


class AblateRequest(BaseModel):
    modes: list[str]
    runs: int = 16
    base_seed: int = 0
    config: dict[str, Any] = Field(default_factory=dict)
    backend: BackendParams = Field(default_factory=BackendParams)


class AblateRow(BaseModel):
    mode: str
    cag: bool
    selection: str
    trigger: str
    runs: int
    mean_recall: float
    mean_insertions: float
    mean_fire_count: float
    mean_p_exp: float | None
    mean_tokens: float


class AblateResponse(BaseModel):
    rows: list[AblateRow]


class AnalyzeRequest(BaseModel):
    traces: list[list[str]]
    scores_text: str
    quantile: float = 0.8
    t_variant: Literal["student", "welch"] = "student"


class GroupReportModel(BaseModel):
    mean_high: float
    mean_low: float
    t_stat: float
    p_value: float
    n_high: int
    n_low: int


class AnalyzeResponse(BaseModel):
    pearson_r: float
    pearson_p: float
    n_used: int
    n_excluded_zero_insertion: int
    group: GroupReportModel | None
    p_exp_mean: float | None
    metadata: dict[str, Any]


class SubmodProbeRequest(BaseModel):
    n_probes: int = 60
    k_small: list[int] = Field(default_factory=lambda: [2, 3, 4, 5])
    base_seed: int = 0
    config: dict[str, Any] = Field(default_factory=dict)
    backend: BackendParams = Field(default_factory=BackendParams)


class SubmodProbeRow(BaseModel):
    k_small: int
    n: int
    holds: int
    proportion: float
    p_value: float


class SubmodProbeResponse(BaseModel):
    rows: list[SubmodProbeRow]


class RenderRequest(BaseModel):
    trace_lines: list[str]


class RenderResponse(BaseModel):
    svg: str


class MaskSweepRequest(BaseModel):
    k_masks: list[int] = Field(default_factory=lambda: [0, 1, 5, 10, 16])
    runs: int = 8
    base_seed: int = 0
    config: dict[str, Any] = Field(default_factory=dict)
    backend: BackendParams = Field(default_factory=BackendParams)


class MaskSweepRow(BaseModel):
    k_mask: int
    mean_recall: float
    mean_realized_gain: float
    degradation_pct: float


class MaskSweepResponse(BaseModel):
    rows: list[MaskSweepRow]


class HealthResponse(BaseModel):
    status: str
    version: str

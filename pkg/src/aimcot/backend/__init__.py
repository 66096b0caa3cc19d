from .base import (
    BackendInfo,
    GenerationContext,
    RegionSegment,
    StepBackend,
    StepResult,
    TextSegment,
    TokenDistribution,
    VisualBaseSegment,
    initial_context,
)
from .counting import CallLog, CountingBackend
from .process import ProcessBackend
from .sim import SimOracleSpec, SimulatedBackend, default_spec

__all__ = [
    "BackendInfo",
    "CallLog",
    "CountingBackend",
    "GenerationContext",
    "ProcessBackend",
    "RegionSegment",
    "SimOracleSpec",
    "SimulatedBackend",
    "StepBackend",
    "StepResult",
    "TextSegment",
    "TokenDistribution",
    "VisualBaseSegment",
    "default_spec",
    "initial_context",
]

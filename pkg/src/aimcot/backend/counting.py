"""Call-accounting wrapper around any step backend."""

from __future__ import annotations

from dataclasses import dataclass

from ..geometry import Region
from .base import BackendInfo, GenerationContext, RegionSegment, StepBackend, StepResult


@dataclass
class CallLog:
    evaluate_requests: int = 0  # evaluate counts 1, a batch counts len(suffixes)
    batch_calls: int = 0
    embed_calls: int = 0
    describe_calls: int = 0

    def snapshot(self) -> dict[str, int]:
        return {
            "evaluate_requests": self.evaluate_requests,
            "batch_calls": self.batch_calls,
            "embed_calls": self.embed_calls,
            "describe_calls": self.describe_calls,
        }


class CountingBackend:
    """Delegates everything, recording how often each operation ran."""

    def __init__(self, inner: StepBackend):
        self.inner = inner
        self.log = CallLog()

    @property
    def info(self) -> BackendInfo:
        return self.inner.info

    def evaluate(self, ctx: GenerationContext) -> StepResult:
        self.log.evaluate_requests += 1
        return self.inner.evaluate(ctx)

    def evaluate_batch(
        self, base: GenerationContext, suffixes: list[RegionSegment]
    ) -> list[StepResult]:
        self.log.batch_calls += 1
        self.log.evaluate_requests += len(suffixes)
        return self.inner.evaluate_batch(base, suffixes)

    def embed_region(self, image: str, region: Region) -> tuple[int, ...]:
        self.log.embed_calls += 1
        return self.inner.embed_region(image, region)

    def describe(self, image: str, question: str, prompt_template: str) -> str:
        self.log.describe_calls += 1
        return self.inner.describe(image, question, prompt_template)

    def encode(self, text: str) -> tuple[int, ...]:
        return self.inner.encode(text)

    def decode(self, ids) -> str:
        return self.inner.decode(ids)

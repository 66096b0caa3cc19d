"""Entropy-driven region selection.

Uncertainty is the Shannon entropy (base 2) of the next-token
distribution. A candidate region's value is the entropy reduction it buys
when appended to the context; the selector greedily takes the best
remaining candidate for a fixed number of steps, re-measuring the base
uncertainty against everything already chosen, so redundant candidates
lose their apparent value as soon as an overlapping region is in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend.base import (
    GenerationContext,
    RegionSegment,
    StepBackend,
    TokenDistribution,
)
from .candidates import CandidateSet
from .errors import BackendError, CapacityError, ContractError
from .geometry import Region


def entropy(d: TokenDistribution) -> float:
    """Shannon entropy in bits; zero-probability terms contribute nothing."""
    p = d.probs[d.probs > 0]
    return float(-(p * np.log2(p)).sum())


def information_gain(base: TokenDistribution, conditioned: TokenDistribution) -> float:
    """Entropy drop from conditioning; negative when the condition confuses."""
    return entropy(base) - entropy(conditioned)


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[Region, ...]
    gains: tuple[float, ...]
    backend_calls: int
    per_step_ranking: tuple[tuple[tuple[int, float], ...], ...] | None = None

    def selected_indices(self, cands: CandidateSet) -> list[int]:
        keys = {r.key: i for i, r in enumerate(cands.regions)}
        return [keys[r.key] for r in self.selected]


def greedy_select(
    ctx: GenerationContext,
    cands: CandidateSet,
    k: int,
    backend: StepBackend,
    *,
    diagnostics: bool = False,
    min_gain: float | None = None,
) -> SelectionResult:
    """Pick ``k`` regions by iterated best-marginal-entropy-reduction.

    Each step costs one base evaluation plus one batched lookahead over
    the remaining candidates, so the backend sees
    ``k + sum(len(cands) - step)`` evaluation requests in total. Ties go
    to the earliest candidate in list order. ``min_gain`` optionally stops
    early once the best remaining candidate falls below the floor
    (default: no floor, negative-gain picks allowed).
    """
    if k > len(cands):
        raise CapacityError(f"cannot select {k} from {len(cands)} candidates")
    vokens = [backend.embed_region(ctx.image, r) for r in cands.regions]
    segments = [RegionSegment(region=r, vokens=v) for r, v in zip(cands.regions, vokens)]

    work = ctx
    remaining = list(range(len(cands)))
    chosen: list[int] = []
    gains: list[float] = []
    rankings: list[tuple[tuple[int, float], ...]] = []
    calls = 0
    for step in range(k):
        try:
            base_result = backend.evaluate(work)
            calls += 1
            results = backend.evaluate_batch(work, [segments[i] for i in remaining])
            calls += len(remaining)
        except BackendError as exc:
            raise BackendError(str(exc), step=step) from exc
        u_b = entropy(base_result.distribution)
        step_gains = [
            (i, u_b - entropy(res.distribution)) for i, res in zip(remaining, results)
        ]
        if diagnostics:
            rankings.append(tuple(step_gains))
        best_i, best_gain = step_gains[0]
        for i, gain in step_gains[1:]:
            if gain > best_gain:
                best_i, best_gain = i, gain
        if min_gain is not None and best_gain < min_gain:
            break
        chosen.append(best_i)
        gains.append(best_gain)
        remaining.remove(best_i)
        work = work.with_region(segments[best_i])
    return SelectionResult(
        selected=tuple(cands.regions[i] for i in chosen),
        gains=tuple(gains),
        backend_calls=calls,
        per_step_ranking=tuple(rankings) if diagnostics else None,
    )


def redundancy_skip_check(result: SelectionResult) -> bool:
    """Did any early favorite get bypassed after its marginal value dropped?

    True iff at some later step the highest first-step-ranked candidate
    still available was passed over for one whose conditional gain had
    become strictly larger. Diagnostic only; requires a selection run with
    diagnostics enabled.
    """
    if result.per_step_ranking is None:
        raise ContractError("selection was run without diagnostics")
    rankings = result.per_step_ranking
    if len(rankings) < 2:
        return False
    initial = dict(rankings[0])
    static_order = sorted(initial, key=lambda i: (-initial[i], i))
    taken: set[int] = set()
    for step, ranking in enumerate(rankings):
        gains = dict(ranking)
        picked = max(gains, key=lambda i: (gains[i], -i))
        if step >= 1:
            favorite = next(i for i in static_order if i not in taken)
            if picked != favorite and gains[favorite] < gains[picked]:
                return True
        taken.add(picked)
    return False


@dataclass(frozen=True)
class SubmodProbeRecord:
    """One diminishing-returns check around a greedy selection.

    The four ``u_*`` values are conditional entropies; ``holds`` records
    whether the held-out region bought at least as much entropy reduction
    on the smaller selection as on the larger one.
    """

    k_small: int
    u_s: float
    u_s_star: float
    u_l: float
    u_l_star: float
    holds: bool


def submodularity_probe(
    ctx: GenerationContext,
    cands: CandidateSet,
    k_small: int,
    backend: StepBackend,
    seed: int,
) -> SubmodProbeRecord:
    """Probe diminishing returns: greedy ``k_small``, extend by one, test one more.

    Greedy selects the small set, one further step yields the large set; a
    held-out candidate is drawn uniformly (seeded) from the rest and its
    marginal entropy reduction is measured against both sets.
    """
    k_large = k_small + 1
    if k_large + 1 > len(cands):
        raise CapacityError(
            f"need at least {k_large + 1} candidates for k_small={k_small}, have {len(cands)}"
        )
    selection = greedy_select(ctx, cands, k_large, backend)
    selected_keys = {r.key for r in selection.selected}
    rest = [r for r in cands.regions if r.key not in selected_keys]
    rng = np.random.Generator(np.random.PCG64(seed))
    r_test = rest[int(rng.integers(len(rest)))]

    def extend(base: GenerationContext, regions) -> GenerationContext:
        out = base
        for region in regions:
            out = out.with_region(
                RegionSegment(region=region, vokens=backend.embed_region(ctx.image, region))
            )
        return out

    small = selection.selected[:k_small]
    large = selection.selected
    ctx_s = extend(ctx, small)
    ctx_l = extend(ctx, large)
    u_s = entropy(backend.evaluate(ctx_s).distribution)
    u_s_star = entropy(backend.evaluate(extend(ctx_s, [r_test])).distribution)
    u_l = entropy(backend.evaluate(ctx_l).distribution)
    u_l_star = entropy(backend.evaluate(extend(ctx_l, [r_test])).distribution)
    holds = (u_s - u_s_star) >= (u_l - u_l_star)
    return SubmodProbeRecord(
        k_small=k_small, u_s=u_s, u_s_star=u_s_star, u_l=u_l, u_l_star=u_l_star, holds=holds
    )

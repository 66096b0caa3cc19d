"""The end-to-end generation loop.

Per response: optionally enrich the question with a model-written image
description (sharpening the saliency map the candidate pools draw from),
then decode token by token. Each step samples from the backend's
distribution (repetition penalty, then temperature, then nucleus
filtering, then a seeded draw), hands the attention snapshot to the
trigger, and on a fire builds a candidate pool from the current saliency
map and inserts the selected regions into the context. Every step is
logged to a trace record; identical inputs give byte-identical traces.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .attention import GridAttentionMap, pool_to_grid
from .backend.base import (
    GenerationContext,
    RegionSegment,
    StepBackend,
    StepResult,
    initial_context,
)
from .backend.counting import CountingBackend
from .candidates import RegionSource, build_candidates, top_n_attention
from .config import RunConfig
from .errors import BackendError, CapacityError
from .geometry import GridSpec, RegionMask
from .infogain import greedy_select
from .trace import TRACE_VERSION, TraceRecord
from .trigger import Decision, TriggerState, observe, reset

DEFAULT_CAG_TEMPLATE = (
    "You are helping someone answer a question about an image. "
    "Write a description of the image that points out exactly what they "
    "should look at to answer.\nQuestion: {question}\nDescription:"
)
MULTIPLE_CHOICE_PREAMBLE = (
    "This is a multiple-choice question. The question is based on the image provided. "
)
CAG_SEPARATOR = "\nimage notes: "


@dataclass(frozen=True)
class CagResult:
    x_prime: str
    description: str | None
    grid_map: GridAttentionMap
    context: GenerationContext
    warning: str | None = None


@dataclass(frozen=True)
class GenerationOutcome:
    record: TraceRecord
    response: str
    insertions: int
    fire_count: int
    p_exp: float | None
    call_totals: dict[str, int]
    error: str | None = None


def _derive_seed(seed: int, token_index: int) -> int:
    data = b"cand:" + struct.pack(">qq", seed, token_index)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def _grid_map_from_rows(
    rows, base_positions: list[int], spec: GridSpec
) -> GridAttentionMap:
    mean_row = np.mean([np.asarray(r)[base_positions] for r in rows], axis=0)
    if not (mean_row > 0).any():
        # fully masked base image still needs a usable map
        mean_row = np.full(len(base_positions), 1.0 / len(base_positions))
    mapping = [(i // spec.s_g, i % spec.s_g) for i in range(len(base_positions))]
    return pool_to_grid(mean_row.reshape(1, -1), mapping, spec, reduce_rows="last")


def run_cag(
    question: str,
    image: str,
    backend: StepBackend,
    cfg: RunConfig,
    mask: RegionMask | None = None,
) -> CagResult:
    """Build the (possibly description-enhanced) prompt and its saliency map."""
    description: str | None = None
    warning: str | None = None
    x_prime = question
    if cfg.cag_enabled:
        template = DEFAULT_CAG_TEMPLATE
        if cfg.multiple_choice:
            template = MULTIPLE_CHOICE_PREAMBLE + template
        description = backend.describe(image, question, template)
        if description:
            x_prime = question + CAG_SEPARATOR + description
        else:
            description = None
            warning = "empty image description; falling back to the raw question"
    ctx = initial_context(backend, backend.encode(x_prime), image, mask=mask)
    result = backend.evaluate(ctx)
    grid_map = _grid_map_from_rows(
        result.attention.per_layer, ctx.base_patch_positions(), backend.info.grid
    )
    return CagResult(
        x_prime=x_prime, description=description, grid_map=grid_map,
        context=ctx, warning=warning,
    )


def _sample_token(
    probs: np.ndarray, generated: list[int], cfg: RunConfig, rng: np.random.Generator
) -> int:
    p = probs.astype(float).copy()
    if cfg.repetition_penalty > 1.0 and generated:
        seen = sorted(set(generated))
        # probabilities are exp(logits); penalizing a negative log-prob
        # multiplies it, i.e. p -> p ** penalty
        p[seen] = p[seen] ** cfg.repetition_penalty
    if cfg.temperature != 1.0:
        p = p ** (1.0 / cfg.temperature)
    total = p.sum()
    if total <= 0:
        p = np.full_like(p, 1.0 / len(p))
    else:
        p = p / total
    if cfg.top_p < 1.0:
        order = np.argsort(-p, kind="stable")
        csum = np.cumsum(p[order])
        cutoff = int(np.searchsorted(csum, cfg.top_p)) + 1
        keep = order[:cutoff]
        filtered = np.zeros_like(p)
        filtered[keep] = p[keep]
        p = filtered / filtered.sum()
    return int(rng.choice(len(p), p=p))


def generate(
    question: str,
    image: str,
    cfg: RunConfig,
    backend: StepBackend,
    qid: str = "q0",
    mask: RegionMask | None = None,
    backend_descriptor: dict | None = None,
    mask_top_k: int = 0,
) -> GenerationOutcome:
    """Run one full generation; never leaves the trace unfinished.

    Backend failures mid-stream finalize the trace with an error marker
    and re-raise a :class:`BackendError` whose ``partial`` attribute holds
    the outcome for the tokens seen so far.
    """
    counting = CountingBackend(backend)
    grid = backend.info.grid
    if (cfg.s_g, cfg.s_r) != (grid.s_g, grid.s_r):
        raise BackendError(
            f"backend grid {grid.s_g}/{grid.s_r} does not match config "
            f"{cfg.s_g}/{cfg.s_r}"
        )
    cag = run_cag(question, image, counting, cfg, mask=mask)
    ctx = cag.context
    base_positions = ctx.base_patch_positions()
    trig_cfg = cfg.trigger_config()
    state: TriggerState = reset()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    eos_id = backend.info.eos_id

    header = {
        "kind": "header",
        "trace_version": TRACE_VERSION,
        "question_id": qid,
        "question": question,
        "image": image,
        "x_prime": cag.x_prime,
        "separator": CAG_SEPARATOR,
        "cag": {
            "enabled": cfg.cag_enabled,
            "description": cag.description,
            "warning": cag.warning,
        },
        "config": cfg.to_flat(),
        "backend": backend_descriptor or {"kind": "in-process"},
        "mask_top_k": mask_top_k,
    }

    generated: list[int] = []
    entries: list[dict] = []
    insertions_done = 0
    attn_selected = 0
    exp_selected = 0
    error: str | None = None

    try:
        for t in range(cfg.max_new_tokens):
            result: StepResult = counting.evaluate(ctx)
            token = _sample_token(result.distribution.probs, generated, cfg, rng)
            text_piece = counting.decode([token])
            generated.append(token)
            ctx = ctx.with_text([token])
            decision = observe(state, trig_cfg, result.attention, text_piece)
            last = state.history[-1]
            stopping = token == eos_id and len(generated) >= cfg.min_new_tokens

            insertion: dict | None = None
            may_insert = (
                decision is Decision.FIRE
                and not stopping
                and (cfg.max_insertions is None or insertions_done < cfg.max_insertions)
            )
            if may_insert:
                if cfg.map_source == "static":
                    live_map = cag.grid_map
                else:
                    live_map = _grid_map_from_rows(
                        result.attention.per_layer, base_positions, grid
                    )
                cands = build_candidates(
                    live_map, cfg.n, cfg.m, grid, _derive_seed(cfg.seed, t)
                )
                if cfg.selection_mode == "avp":
                    sel = greedy_select(
                        ctx, cands, cfg.k, counting, min_gain=cfg.min_gain
                    )
                    regions = list(sel.selected)
                    gains = list(sel.gains)
                    calls = sel.backend_calls
                    sources = [
                        cands.sources[i].value for i in sel.selected_indices(cands)
                    ]
                else:
                    regions = top_n_attention(live_map, cfg.k, grid)
                    gains = []
                    calls = 0
                    sources = [RegionSource.ATTENTION.value] * len(regions)
                for region in regions:
                    ctx = ctx.with_region(
                        RegionSegment(
                            region=region,
                            vokens=counting.embed_region(image, region),
                        )
                    )
                attn_selected += sum(1 for s in sources if s == RegionSource.ATTENTION.value)
                exp_selected += sum(1 for s in sources if s == RegionSource.EXPLORATORY.value)
                insertions_done += 1
                insertion = {
                    "regions": [
                        {"row": r.row, "col": r.col, "span": r.span, "bbox": list(r.bbox)}
                        for r in regions
                    ],
                    "sources": sources,
                    "gains": gains,
                    "backend_calls": calls,
                }

            entries.append(
                {
                    "kind": "token",
                    "index": t,
                    "token": token,
                    "text": text_piece,
                    "a_visual": last.mass,
                    "delta": last.delta,
                    "fired": last.fired,
                    "insertion": insertion,
                }
            )
            if stopping:
                break
    except BackendError as exc:
        error = str(exc)

    total_selected = attn_selected + exp_selected
    p_exp = (exp_selected / total_selected) if total_selected else None
    response = counting.decode(generated)
    summary = {
        "kind": "summary",
        "response": response,
        "tokens": len(generated),
        "insertions": insertions_done,
        "fire_count": state.fire_count,
        "p_exp": p_exp,
        "backend_call_totals": counting.log.snapshot(),
        "error": error,
    }
    outcome = GenerationOutcome(
        record=TraceRecord(header=header, tokens=entries, summary=summary),
        response=response,
        insertions=insertions_done,
        fire_count=state.fire_count,
        p_exp=p_exp,
        call_totals=counting.log.snapshot(),
        error=error,
    )
    if error is not None:
        failure = BackendError(error)
        failure.partial = outcome  # type: ignore[attr-defined]
        raise failure
    return outcome


def mask_probe(
    question: str,
    image: str,
    k_mask: int,
    cfg: RunConfig,
    backend: StepBackend,
    qid: str = "q0",
    backend_descriptor: dict | None = None,
) -> GenerationOutcome:
    """Generate with the top-scoring attention cells blanked out.

    The cells come from the pre-generation saliency map; the backend is
    told to zero their contribution for the whole run. ``k_mask = 0`` is
    byte-identical to a plain generation.
    """
    grid = backend.info.grid
    if k_mask > grid.n_cells:
        raise CapacityError(f"cannot mask {k_mask} of {grid.n_cells} cells")
    if k_mask == 0:
        return generate(
            question, image, cfg, backend, qid=qid,
            backend_descriptor=backend_descriptor,
        )
    probe = run_cag(question, image, backend, cfg)
    flat = probe.grid_map.scores.reshape(-1)
    order = sorted(range(grid.n_cells), key=lambda i: (-flat[i], i))
    cells = np.zeros((grid.s_g, grid.s_g), dtype=bool)
    for idx in order[:k_mask]:
        cells[idx // grid.s_g, idx % grid.s_g] = True
    mask = RegionMask(spec=grid, cells=cells)
    return generate(
        question, image, cfg, backend, qid=qid, mask=mask,
        backend_descriptor=backend_descriptor, mask_top_k=k_mask,
    )

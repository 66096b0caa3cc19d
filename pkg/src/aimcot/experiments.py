"""Desk-scale experiment procedures over the simulated backend.

These drive full generations (or selection probes) across seeds and
aggregate the quantities the analyses report: evidence recall of the
inserted regions, selection-source proportions, trigger frequencies, the
masking degradation sweep, and batched diminishing-returns probes with
their exact binomial significance.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .backend import SimulatedBackend
from .backend.sim import SimOracleSpec
from .candidates import build_candidates
from .config import RunConfig
from .errors import ConfigError
from .infogain import submodularity_probe
from .orchestrator import generate, mask_probe, run_cag
from .stats import binom_test_one_sided
from .trace import TraceRecord

# the named ablation rows: (cag_enabled, selection_mode, trigger_mode)
ABLATION_MODES: dict[str, tuple[bool, str, str]] = {
    "aimcot": (True, "avp", "attention_shift"),
    "wo_cag": (False, "avp", "attention_shift"),
    "wo_avp": (True, "topk", "attention_shift"),
    "wo_dat": (True, "avp", "newline"),
}


def matrix_modes() -> dict[str, tuple[bool, str, str]]:
    """The full 2x2x2 grid of (cag, selection, trigger) combinations."""
    out: dict[str, tuple[bool, str, str]] = {}
    for cag in (True, False):
        for sel in ("avp", "topk"):
            for trig in ("attention_shift", "newline"):
                name = f"cag={'on' if cag else 'off'},sel={sel},trig={trig}"
                out[name] = (cag, sel, trig)
    return out


def resolve_modes(names: list[str]) -> dict[str, tuple[bool, str, str]]:
    if not names:
        raise ConfigError("mode list must not be empty")
    table = dict(matrix_modes())
    table.update(ABLATION_MODES)
    if names == ["all"]:
        return matrix_modes()
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigError(f"unknown ablation modes: {unknown}")
    return {n: table[n] for n in names}


def evidence_recall(record: TraceRecord, evidence: frozenset[tuple[int, int]]) -> float:
    """Fraction of evidence cells covered by the trace's inserted regions."""
    if not evidence:
        return 0.0
    covered: set[tuple[int, int]] = set()
    for ins in record.insertions():
        for r in ins["regions"]:
            for dr in range(r["span"]):
                for dc in range(r["span"]):
                    covered.add((r["row"] + dr, r["col"] + dc))
    return len(covered & set(evidence)) / len(evidence)


@dataclass(frozen=True)
class RunSummary:
    seed: int
    recall: float
    insertions: int
    fire_count: int
    p_exp: float | None
    tokens: int


def run_seeded(
    spec: SimOracleSpec, cfg: RunConfig, seeds: list[int], question: str = "probe"
) -> list[RunSummary]:
    out: list[RunSummary] = []
    for seed in seeds:
        backend = SimulatedBackend(spec)
        result = generate(
            question, "sim://image", cfg.replace(seed=seed), backend, qid=f"q{seed}"
        )
        out.append(
            RunSummary(
                seed=seed,
                recall=evidence_recall(result.record, spec.evidence_cells),
                insertions=result.insertions,
                fire_count=result.fire_count,
                p_exp=result.p_exp,
                tokens=len(result.record.tokens),
            )
        )
    return out


@dataclass(frozen=True)
class ContrastResult:
    """Paired per-seed comparison of the two selection modes."""

    avp_recalls: tuple[float, ...]
    topk_recalls: tuple[float, ...]
    wins: int
    losses: int
    ties: int
    sign_test_p: float

    @property
    def mean_avp(self) -> float:
        return float(np.mean(self.avp_recalls))

    @property
    def mean_topk(self) -> float:
        return float(np.mean(self.topk_recalls))


def paired_selection_contrast(
    spec: SimOracleSpec, cfg: RunConfig, seeds: list[int]
) -> ContrastResult:
    """Same seeds, same trigger; only the selection rule differs."""
    avp = run_seeded(spec, cfg.replace(selection_mode="avp"), seeds)
    topk = run_seeded(spec, cfg.replace(selection_mode="topk"), seeds)
    wins = sum(1 for a, t in zip(avp, topk) if a.recall > t.recall)
    losses = sum(1 for a, t in zip(avp, topk) if a.recall < t.recall)
    ties = len(seeds) - wins - losses
    decisive = wins + losses
    p = binom_test_one_sided(wins, decisive, 0.5) if decisive else 1.0
    return ContrastResult(
        avp_recalls=tuple(r.recall for r in avp),
        topk_recalls=tuple(r.recall for r in topk),
        wins=wins,
        losses=losses,
        ties=ties,
        sign_test_p=p,
    )


@dataclass(frozen=True)
class AblationRow:
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


def ablation_matrix(
    spec: SimOracleSpec, cfg: RunConfig, modes: list[str], runs: int, base_seed: int = 0
) -> list[AblationRow]:
    resolved = resolve_modes(modes)
    seeds = [base_seed + i for i in range(runs)]
    rows: list[AblationRow] = []
    for name, (cag, sel, trig) in resolved.items():
        mode_cfg = cfg.replace(cag_enabled=cag, selection_mode=sel, trigger_mode=trig)
        summaries = run_seeded(spec, mode_cfg, seeds)
        p_exps = [s.p_exp for s in summaries if s.p_exp is not None]
        rows.append(
            AblationRow(
                mode=name,
                cag=cag,
                selection=sel,
                trigger=trig,
                runs=runs,
                mean_recall=float(np.mean([s.recall for s in summaries])),
                mean_insertions=float(np.mean([s.insertions for s in summaries])),
                mean_fire_count=float(np.mean([s.fire_count for s in summaries])),
                mean_p_exp=float(np.mean(p_exps)) if p_exps else None,
                mean_tokens=float(np.mean([s.tokens for s in summaries])),
            )
        )
    return rows


@dataclass(frozen=True)
class MaskSweepRow:
    k_mask: int
    mean_recall: float
    mean_realized_gain: float
    degradation_pct: float  # realized-gain loss relative to the first row


def mask_degradation_sweep(
    spec: SimOracleSpec,
    cfg: RunConfig,
    k_masks: list[int],
    seeds: list[int],
    question: str = "probe",
) -> list[MaskSweepRow]:
    """Recall and realized gain as more of the salient grid is blanked."""
    rows: list[MaskSweepRow] = []
    baseline: float | None = None
    for k_mask in k_masks:
        recalls: list[float] = []
        gains: list[float] = []
        for seed in seeds:
            backend = SimulatedBackend(spec)
            result = mask_probe(
                question, "sim://image", min(k_mask, spec.grid.n_cells),
                cfg.replace(seed=seed), backend, qid=f"q{seed}",
            )
            recalls.append(evidence_recall(result.record, spec.evidence_cells))
            gains.append(
                sum(g for ins in result.record.insertions() for g in ins["gains"])
            )
        mean_gain = float(np.mean(gains))
        if baseline is None:
            baseline = mean_gain
        degradation = 0.0
        if baseline > 0:
            degradation = 100.0 * (baseline - mean_gain) / baseline
        rows.append(
            MaskSweepRow(
                k_mask=min(k_mask, spec.grid.n_cells),
                mean_recall=float(np.mean(recalls)),
                mean_realized_gain=mean_gain,
                degradation_pct=degradation,
            )
        )
    return rows


@dataclass(frozen=True)
class SubmodBatchRow:
    k_small: int
    n: int
    holds: int
    proportion: float
    p_value: float


def _probe_seed(base_seed: int, k_small: int, index: int) -> int:
    data = b"probe:" + struct.pack(">qqq", base_seed, k_small, index)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def submod_probe_batch(
    spec: SimOracleSpec,
    cfg: RunConfig,
    n_probes: int,
    k_smalls: list[int],
    base_seed: int = 0,
) -> list[SubmodBatchRow]:
    """Run ``n_probes`` diminishing-returns probes per small-set size.

    Each probe uses a distinct question so the saliency noise (and hence
    the candidate pool) varies; significance is the exact upper-tail
    binomial probability against chance.
    """
    rows: list[SubmodBatchRow] = []
    for k_small in k_smalls:
        if k_small + 2 > cfg.n + cfg.m:
            raise ConfigError(
                f"k_small={k_small} needs at least {k_small + 2} candidates, "
                f"pool has {cfg.n + cfg.m}"
            )
        holds = 0
        for i in range(n_probes):
            backend = SimulatedBackend(spec)
            cag = run_cag(f"probe {k_small} {i}", "sim://image", backend, cfg)
            seed = _probe_seed(base_seed, k_small, i)
            cands = build_candidates(cag.grid_map, cfg.n, cfg.m, spec.grid, seed)
            record = submodularity_probe(cag.context, cands, k_small, backend, seed)
            holds += int(record.holds)
        rows.append(
            SubmodBatchRow(
                k_small=k_small,
                n=n_probes,
                holds=holds,
                proportion=holds / n_probes,
                p_value=binom_test_one_sided(holds, n_probes, 0.5),
            )
        )
    return rows

"""Per-stream trigger deciding when to insert visual evidence.

In attention-shift mode the trigger fires when the visual attention mass
climbs by strictly more than the threshold between consecutive generated
tokens; the first token never fires. Newline mode fires on a line break
in the token text; never-mode always holds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .attention import AttentionSnapshot, visual_attention_mass
from .errors import ContractError


class TriggerMode(str, enum.Enum):
    ATTENTION_SHIFT = "attention_shift"
    NEWLINE = "newline"
    NEVER = "never"


class Decision(str, enum.Enum):
    FIRE = "fire"
    HOLD = "hold"


@dataclass(frozen=True)
class TriggerConfig:
    delta: float
    n_layers: int = 3
    mode: TriggerMode = TriggerMode.ATTENTION_SHIFT

    def __post_init__(self) -> None:
        # +/-inf are legal sweep endpoints; only NaN is meaningless
        if math.isnan(self.delta):
            raise ContractError("trigger threshold must not be NaN")
        if self.n_layers < 1:
            raise ContractError("n_layers must be >= 1")


@dataclass
class HistoryEntry:
    token_index: int
    mass: float
    delta: float | None
    fired: bool


@dataclass
class TriggerState:
    prev_visual_mass: float | None = None
    fire_count: int = 0
    history: list[HistoryEntry] = field(default_factory=list)


def reset(state: TriggerState | None = None) -> TriggerState:
    """Fresh state: no predecessor mass, empty history."""
    return TriggerState()


def observe(
    state: TriggerState,
    cfg: TriggerConfig,
    snap: AttentionSnapshot,
    token_text: str,
) -> Decision:
    """Record one generated token and decide whether to fire."""
    if len(snap.per_layer) < cfg.n_layers:
        raise ContractError(
            f"snapshot has {len(snap.per_layer)} layers, trigger needs {cfg.n_layers}"
        )
    mass = visual_attention_mass(snap.last_layers(cfg.n_layers))
    delta: float | None = None
    if state.prev_visual_mass is not None:
        delta = mass - state.prev_visual_mass

    if cfg.mode is TriggerMode.ATTENTION_SHIFT:
        fired = delta is not None and delta > cfg.delta
    elif cfg.mode is TriggerMode.NEWLINE:
        fired = "\n" in token_text
    else:
        fired = False

    state.history.append(
        HistoryEntry(token_index=len(state.history), mass=mass, delta=delta, fired=fired)
    )
    state.prev_visual_mass = mass
    if fired:
        state.fire_count += 1
    return Decision.FIRE if fired else Decision.HOLD

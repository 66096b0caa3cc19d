"""Run configuration: flat dotted-key files, env and CLI overrides.

Config files are plain text, one ``dotted.key = value`` per line, ``#``
comments allowed. Environment variables override file values using the
``AIMCOT_`` prefix with ``__`` standing in for the dot
(``AIMCOT_TRIGGER__DELTA=0.3`` sets ``trigger.delta``); explicit
``key=value`` overrides apply last. Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .trigger import TriggerConfig, TriggerMode

ENV_PREFIX = "AIMCOT_"

DEFAULT_QUESTION = "What does the image show?"
DEFAULT_IMAGE = "sim://image"

# key -> (python type, default). Booleans parse from true/false, thresholds
# accept inf/-inf.
_SCHEMA: dict[str, tuple[type, Any]] = {
    "grid.s_g": (int, 4),
    "grid.s_r": (int, 1),
    "candidates.n": (int, 4),
    "candidates.m": (int, 4),
    "select.k": (int, 3),
    "select.mode": (str, "avp"),
    "select.min_gain": (float, None),
    "trigger.mode": (str, "attention_shift"),
    "trigger.delta": (float, 0.2),
    "trigger.n_layers": (int, 3),
    "trigger.max_insertions": (int, None),
    "cag.enabled": (bool, True),
    "cag.multiple_choice": (bool, False),
    "map.source": (str, "live"),
    "decode.temperature": (float, 0.7),
    "decode.top_p": (float, 0.9),
    "decode.repetition_penalty": (float, 1.2),
    "decode.min_new_tokens": (int, 32),
    "decode.max_new_tokens": (int, 512),
    "seed": (int, 0),
}

_SELECTION_MODES = ("avp", "topk")
_MAP_SOURCES = ("live", "static")

# short spellings accepted anywhere a key is; canonical dotted form is echoed
_ALIASES = {
    "s_g": "grid.s_g",
    "s_r": "grid.s_r",
    "n": "candidates.n",
    "m": "candidates.m",
    "k": "select.k",
    "delta": "trigger.delta",
    "n_layers": "trigger.n_layers",
    "max_insertions": "trigger.max_insertions",
    "temperature": "decode.temperature",
    "top_p": "decode.top_p",
    "repetition_penalty": "decode.repetition_penalty",
    "min_new_tokens": "decode.min_new_tokens",
    "max_new_tokens": "decode.max_new_tokens",
}


def canonical_key(key: str) -> str:
    key = _ALIASES.get(key, key)
    if key not in _SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def default_flat() -> dict[str, Any]:
    return {key: default for key, (_, default) in _SCHEMA.items()}


def _parse_value(key: str, raw: str) -> Any:
    if key not in _SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    typ, default = _SCHEMA[key]
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        if default is None:
            return None
        raise ConfigError(f"config key {key!r} cannot be empty")
    try:
        if typ is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from exc


def parse_config_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = canonical_key(key)
        values[key] = _parse_value(key, value)
    return values


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = canonical_key(name[len(ENV_PREFIX):].lower().replace("__", "."))
        values[key] = _parse_value(key, raw)
    return values


def parse_overrides(items: list[str]) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        key = canonical_key(key)
        values[key] = _parse_value(key, value)
    return values


def coerce_flat(values: Mapping[str, Any]) -> dict[str, Any]:
    """Normalize a flat mapping whose values may arrive as strings.

    JSON transport cannot carry non-finite floats, so clients send them as
    strings ("inf", "-inf"); any string value re-parses through the key's
    schema type.
    """
    out: dict[str, Any] = {}
    for key, value in values.items():
        key = canonical_key(key)
        out[key] = _parse_value(key, value) if isinstance(value, str) else value
    return out


def resolve_flat(
    config_path: str | Path | None = None,
    environ: Mapping[str, str] | None = None,
    overrides: list[str] | None = None,
) -> dict[str, Any]:
    """defaults < config file < environment < explicit overrides."""
    flat = default_flat()
    if config_path is not None:
        flat.update(parse_config_file(config_path))
    if environ is not None:
        flat.update(env_overrides(environ))
    if overrides:
        flat.update(parse_overrides(overrides))
    return flat


@dataclass(frozen=True)
class RunConfig:
    """Everything one generation run depends on besides the backend."""

    s_g: int = 4
    s_r: int = 1
    n: int = 4
    m: int = 4
    k: int = 3
    selection_mode: str = "avp"
    min_gain: float | None = None
    trigger_mode: TriggerMode = TriggerMode.ATTENTION_SHIFT
    delta: float = 0.2
    n_layers: int = 3
    max_insertions: int | None = None
    cag_enabled: bool = True
    multiple_choice: bool = False
    map_source: str = "live"
    temperature: float = 0.7
    top_p: float = 0.9
    repetition_penalty: float = 1.2
    min_new_tokens: int = 32
    max_new_tokens: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.trigger_mode, str):
            try:
                object.__setattr__(self, "trigger_mode", TriggerMode(self.trigger_mode))
            except ValueError:
                raise ConfigError(
                    f"trigger.mode must be one of {[m.value for m in TriggerMode]}"
                ) from None
        if self.k > self.n + self.m:
            raise ConfigError(f"select.k={self.k} exceeds candidate pool {self.n + self.m}")
        if self.n < 0 or self.m < 0 or self.k < 0:
            raise ConfigError("candidate and selection counts must be non-negative")
        if self.n + self.m > self.s_g * self.s_g:
            raise ConfigError(
                f"candidate pool {self.n + self.m} exceeds the {self.s_g}x{self.s_g} grid"
            )
        if self.selection_mode not in _SELECTION_MODES:
            raise ConfigError(f"select.mode must be one of {_SELECTION_MODES}")
        if self.map_source not in _MAP_SOURCES:
            raise ConfigError(f"map.source must be one of {_MAP_SOURCES}")
        if not self.temperature > 0:
            raise ConfigError("decode.temperature must be > 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError("decode.top_p must be in (0, 1]")
        if self.repetition_penalty < 1.0:
            raise ConfigError("decode.repetition_penalty must be >= 1")
        if self.min_new_tokens < 0 or self.max_new_tokens < 1:
            raise ConfigError("decode token limits out of range")
        if math.isnan(self.delta):
            raise ConfigError("trigger.delta must not be NaN")
        if self.n_layers < 1:
            raise ConfigError("trigger.n_layers must be >= 1")

    @property
    def n_c(self) -> int:
        return self.n + self.m

    def trigger_config(self) -> TriggerConfig:
        return TriggerConfig(delta=self.delta, n_layers=self.n_layers, mode=self.trigger_mode)

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        merged = default_flat()
        merged.update(coerce_flat(flat))
        try:
            trigger_mode = TriggerMode(merged["trigger.mode"])
        except ValueError:
            raise ConfigError(
                f"trigger.mode must be one of {[m.value for m in TriggerMode]}"
            ) from None
        return cls(
            s_g=merged["grid.s_g"],
            s_r=merged["grid.s_r"],
            n=merged["candidates.n"],
            m=merged["candidates.m"],
            k=merged["select.k"],
            selection_mode=merged["select.mode"],
            min_gain=merged["select.min_gain"],
            trigger_mode=trigger_mode,
            delta=merged["trigger.delta"],
            n_layers=merged["trigger.n_layers"],
            max_insertions=merged["trigger.max_insertions"],
            cag_enabled=merged["cag.enabled"],
            multiple_choice=merged["cag.multiple_choice"],
            map_source=merged["map.source"],
            temperature=merged["decode.temperature"],
            top_p=merged["decode.top_p"],
            repetition_penalty=merged["decode.repetition_penalty"],
            min_new_tokens=merged["decode.min_new_tokens"],
            max_new_tokens=merged["decode.max_new_tokens"],
            seed=merged["seed"],
        )

    def to_flat(self) -> dict[str, Any]:
        return {
            "grid.s_g": self.s_g,
            "grid.s_r": self.s_r,
            "candidates.n": self.n,
            "candidates.m": self.m,
            "select.k": self.k,
            "select.mode": self.selection_mode,
            "select.min_gain": self.min_gain,
            "trigger.mode": self.trigger_mode.value,
            "trigger.delta": self.delta,
            "trigger.n_layers": self.n_layers,
            "trigger.max_insertions": self.max_insertions,
            "cag.enabled": self.cag_enabled,
            "cag.multiple_choice": self.multiple_choice,
            "map.source": self.map_source,
            "decode.temperature": self.temperature,
            "decode.top_p": self.top_p,
            "decode.repetition_penalty": self.repetition_penalty,
            "decode.min_new_tokens": self.min_new_tokens,
            "decode.max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
        }

    def replace(self, **changes) -> "RunConfig":
        flat = self.to_flat()
        mapping = {
            "s_g": "grid.s_g", "s_r": "grid.s_r", "n": "candidates.n",
            "m": "candidates.m", "k": "select.k", "selection_mode": "select.mode",
            "min_gain": "select.min_gain", "trigger_mode": "trigger.mode",
            "delta": "trigger.delta", "n_layers": "trigger.n_layers",
            "max_insertions": "trigger.max_insertions", "cag_enabled": "cag.enabled",
            "multiple_choice": "cag.multiple_choice", "map_source": "map.source",
            "temperature": "decode.temperature", "top_p": "decode.top_p",
            "repetition_penalty": "decode.repetition_penalty",
            "min_new_tokens": "decode.min_new_tokens",
            "max_new_tokens": "decode.max_new_tokens", "seed": "seed",
        }
        for name, value in changes.items():
            if name not in mapping:
                raise ConfigError(f"unknown run-config field {name!r}")
            if isinstance(value, TriggerMode):
                value = value.value
            flat[mapping[name]] = value
        return RunConfig.from_flat(flat)

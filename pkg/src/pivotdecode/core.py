"""Shared value types: logit vectors, token sets, decode config and traces.

Logit vectors are plain 1-D ``float64`` numpy arrays flagged read-only, so
they can be shared freely between decode sessions and threads.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, IndexOutOfRange, LengthMismatch, NonFiniteError, RangeError

MODES = ("greedy", "sample")
# Long-form mode names accepted in config files and overrides.
MODE_ALIASES = {"greedy-argmax": "greedy", "cutoff-sample": "sample"}


def logit_vector(scores: Iterable[float]) -> np.ndarray:
    """Build an immutable logit vector, rejecting empty or non-finite input.

    Read-only float64 arrays are already immutable and are returned as-is.
    """
    if isinstance(scores, np.ndarray) and scores.dtype == np.float64 and not scores.flags.writeable:
        arr = scores
    else:
        arr = np.array(scores, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.size == 0:
        raise LengthMismatch(f"logit vector must be 1-D and non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise NonFiniteError(f"non-finite logit at index {bad}: {arr[bad]!r}")
    if arr.flags.writeable:
        arr.setflags(write=False)
    return arr


def pivot_token_ids(indices: Iterable[int], vocab_size: int) -> frozenset[int]:
    """Collapse ``indices`` into a validated pivot token set."""
    out = set()
    for i in indices:
        i = int(i)
        if not 0 <= i < vocab_size:
            raise IndexOutOfRange(f"token id {i} outside vocabulary of size {vocab_size}")
        out.add(i)
    return frozenset(out)


@dataclass(frozen=True)
class DecodeConfig:
    """Hyperparameters of a decode session.

    ``epsilon``, ``beta``, ``kappa`` and ``delta`` default to the reference
    settings of the method. ``tau`` has no reference value; 0.1 is the usual
    adaptive-plausibility cutoff from the contrastive decoding literature.
    """

    epsilon: float = 0.1
    beta: float = 0.2
    kappa: float = 0.1
    tau: float = 0.1
    delta: float = 1e-6
    max_steps: int = 32
    mode: str = "greedy"
    rng_seed: int = 0
    # Run the shuffled pathway even when a sample has no image (L_conf then
    # equals L_std and the contrast reduces to a uniform damping).
    contrast_text_only: bool = True

    def replace(self, **changes) -> "DecodeConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DecodeConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return validate_config(cls(**data))


def _is_real(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(cfg: DecodeConfig) -> DecodeConfig:
    """Return ``cfg`` unchanged if every field is in range, else raise RangeError."""
    if not _is_real(cfg.epsilon) or cfg.epsilon < 0:
        raise RangeError("epsilon", "must be a finite real >= 0")
    if not _is_real(cfg.beta) or cfg.beta < 0:
        raise RangeError("beta", "must be a finite real >= 0")
    if not _is_real(cfg.kappa) or cfg.kappa <= 0:
        raise RangeError("kappa", "must be a finite real > 0")
    if not _is_real(cfg.tau) or not 0 < cfg.tau <= 1:
        raise RangeError("tau", "must lie in (0, 1]")
    if not _is_real(cfg.delta) or cfg.delta <= 0:
        raise RangeError("delta", "must be a finite real > 0")
    if not isinstance(cfg.max_steps, int) or isinstance(cfg.max_steps, bool) or cfg.max_steps < 0:
        raise RangeError("max_steps", "must be a non-negative integer")
    if cfg.mode not in MODES:
        raise RangeError("mode", f"must be one of {MODES}")
    if not isinstance(cfg.rng_seed, int) or isinstance(cfg.rng_seed, bool) or not 0 <= cfg.rng_seed < 2**64:
        raise RangeError("rng_seed", "must be an unsigned 64-bit integer")
    if not isinstance(cfg.contrast_text_only, bool):
        raise RangeError("contrast_text_only", "must be a boolean")
    return cfg


# -- flat key=value config files ------------------------------------------

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_field(name: str, raw: str):
    ftype = {f.name: f.type for f in dataclasses.fields(DecodeConfig)}[name]
    raw = raw.strip()
    if name == "mode":
        return MODE_ALIASES.get(raw, raw)
    try:
        if ftype == "float":
            return float(raw)
        if ftype == "int":
            return int(raw, 0)
        if ftype == "bool":
            return _BOOL_WORDS[raw.lower()]
    except (ValueError, KeyError):
        raise RangeError(name, f"cannot parse {raw!r} as {ftype}") from None
    return raw


def parse_overrides(pairs: Sequence[str]) -> dict:
    """Parse ``key=value`` strings into typed DecodeConfig field values."""
    known = {f.name for f in dataclasses.fields(DecodeConfig)}
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _parse_field(key, value)
    return out


def loads_config(text: str) -> DecodeConfig:
    lines = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return DecodeConfig.from_dict(parse_overrides(lines))


def dumps_config(cfg: DecodeConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)  # shortest repr round-trips exactly
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> DecodeConfig:
    return loads_config(Path(path).read_text(encoding="utf-8"))


# -- traces -----------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """Everything needed to recompute one decoding step after the fact.

    ``l_conf``, ``alpha`` and ``c`` are ``None`` for single-pathway decoders.
    """

    l_std: np.ndarray
    l_conf: Optional[np.ndarray]
    alpha: Optional[np.ndarray]
    c: Optional[float]
    l_final: np.ndarray
    token: int
    elapsed_ns: int


@dataclass
class DecodeTrace:
    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def total_ns(self) -> int:
        return sum(s.elapsed_ns for s in self.steps)

    def ns_per_token(self) -> float:
        return self.total_ns / len(self.steps) if self.steps else 0.0

"""Gate construction and projected, gated logit subtraction.

The standard-pathway logits are decomposed against the conflict-pathway
logits; only the component aligned with the conflict direction is removed,
token-wise scaled by a suppression gate that is raised on pivot tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet

import numpy as np

from .errors import IndexOutOfRange, LengthMismatch, RangeError


@dataclass(frozen=True)
class ProjectionResult:
    c: float
    l_proj: np.ndarray


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _same_length(*arrays: np.ndarray) -> None:
    n = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != n:
            raise LengthMismatch(f"vector lengths differ: {[x.shape[0] for x in arrays]}")


def sigmoid(x):
    """Logistic function, overflow-free for large |x|."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def init_gate(vocab_size: int, epsilon: float) -> np.ndarray:
    """Uniform suppression baseline: a gate of ``epsilon`` on every token."""
    if vocab_size <= 0:
        raise RangeError("vocab_size", "must be positive")
    if epsilon < 0:
        raise RangeError("epsilon", "must be >= 0")
    return _readonly(np.full(vocab_size, float(epsilon)))


def pivot_index(pivots: AbstractSet[int]) -> np.ndarray:
    """Sorted index array for a pivot set, reusable across decoding steps."""
    return np.fromiter(sorted(pivots), dtype=np.int64, count=len(pivots))


def apply_pivot_gate(
    gate: np.ndarray,
    l_conf: np.ndarray,
    pivots: AbstractSet[int] | np.ndarray,
    beta: float,
    kappa: float,
) -> np.ndarray:
    """Raise the gate on pivot tokens by ``beta * sigmoid(kappa * l_conf)``.

    Non-pivot entries are copied through untouched and the input gate is
    never modified. An empty pivot set returns the gate as-is. ``pivots``
    may also be a sorted index array from :func:`pivot_index`.
    """
    gate = _vec(gate)
    l_conf = _vec(l_conf)
    _same_length(gate, l_conf)
    if len(pivots) == 0:
        return gate
    idx = pivots if isinstance(pivots, np.ndarray) else pivot_index(pivots)
    if idx[0] < 0 or idx[-1] >= gate.shape[0]:
        raise IndexOutOfRange(f"pivot ids must lie in [0, {gate.shape[0]})")
    return _gate_kernel(gate, l_conf, idx, beta, kappa)


_SCALAR_PIVOTS = 16


def _gate_kernel(gate, l_conf, idx, beta, kappa):
    # Unchecked inner step: float64 vectors of equal length, idx in range.
    out = gate.copy()
    if len(idx) <= _SCALAR_PIVOTS:
        # Scalar path: cheaper than array dispatch for a handful of pivots.
        for i in idx.tolist():
            out[i] += beta * 0.5 * (1.0 + math.tanh(0.5 * kappa * float(l_conf[i])))
    else:
        out[idx] += beta * np.exp(-np.logaddexp(0.0, -kappa * l_conf[idx]))
    return _readonly(out)


def projection_coefficient(l_std: np.ndarray, l_conf: np.ndarray, delta: float) -> float:
    """Scalar projection of ``l_std`` onto ``l_conf``, damped by ``delta``."""
    l_std = _vec(l_std)
    l_conf = _vec(l_conf)
    _same_length(l_std, l_conf)
    if not delta > 0:
        raise RangeError("delta", "must be > 0")
    return float(np.dot(l_std, l_conf) / (np.dot(l_conf, l_conf) + delta))


def gated_subtract(
    l_std: np.ndarray,
    l_conf: np.ndarray,
    gate: np.ndarray,
    delta: float,
    project: bool = True,
) -> tuple[np.ndarray, ProjectionResult]:
    """Return ``l_std - gate * (c * l_conf)`` together with ``c`` and ``c * l_conf``.

    With ``project=False`` the coefficient is pinned to 1 and ``l_conf`` is
    subtracted directly, which turns the operation into plain linear
    contrast with a per-token weight.
    """
    l_std = _vec(l_std)
    l_conf = _vec(l_conf)
    gate = _vec(gate)
    _same_length(l_std, l_conf, gate)
    if not project:
        l_proj = l_conf.copy()
        return _readonly(l_std - gate * l_proj), ProjectionResult(c=1.0, l_proj=_readonly(l_proj))
    if not delta > 0:
        raise RangeError("delta", "must be > 0")
    l_final, c = _subtract_kernel(l_std, l_conf, gate, delta)
    return l_final, ProjectionResult(c=c, l_proj=_readonly(c * l_conf))


def _subtract_kernel(l_std, l_conf, gate, delta):
    # Unchecked inner step returning (l_final, c).
    c = float(l_std @ l_conf / (l_conf @ l_conf + delta))
    out = l_conf * c
    out *= gate
    np.subtract(l_std, out, out=out)
    return _readonly(out), c

"""Decoding loops: pivot-gated contrast, plain greedy, and linear contrast."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import AbstractSet, Iterable, Optional, TextIO

import numpy as np

from .adapters import GenerationContext, LogitModel, dual_pathway_logits, next_logits, shuffled_view
from .contrast import _gate_kernel, _subtract_kernel, init_gate, pivot_index
from .core import DecodeConfig, DecodeTrace, StepRecord, pivot_token_ids, validate_config
from .errors import AllMasked, RangeError


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]
    text: str
    trace: DecodeTrace

    @property
    def ns_per_token(self) -> float:
        return self.trace.ns_per_token()


def cutoff_filter(l_final: np.ndarray, tau: float) -> np.ndarray:
    """Mask every token whose logit is below ``max + ln(tau)`` with ``-inf``.

    Equivalent to keeping tokens whose softmax probability is at least
    ``tau`` times the top probability. The argmax always survives.
    """
    if not (isinstance(tau, (int, float)) and 0 < tau <= 1):
        raise RangeError("tau", "must lie in (0, 1]")
    out = np.array(l_final, dtype=np.float64)
    top = int(out.argmax())
    out[out < out[top] + math.log(tau)] = -np.inf
    out[top] = l_final[top]
    return out


def select_token(filtered: np.ndarray, mode: str, rng: Optional[np.random.Generator] = None) -> int:
    """Lowest-index argmax in greedy mode; a softmax draw over unmasked entries otherwise."""
    filtered = np.asarray(filtered, dtype=np.float64)
    if mode == "greedy":
        # Masked entries are -inf, so they can only win when all are masked.
        top = int(filtered.argmax())
        if filtered[top] == -np.inf:
            raise AllMasked("every candidate token is masked")
        return top
    alive = np.isfinite(filtered)
    if not alive.any():
        raise AllMasked("every candidate token is masked")
    if mode != "sample":
        raise RangeError("mode", f"unknown selection mode {mode!r}")
    if rng is None:
        raise ValueError("sample mode needs a random generator")
    shifted = np.where(alive, filtered - filtered[alive].max(), -np.inf)
    probs = np.exp(shifted)
    probs /= probs.sum()
    return int(rng.choice(probs.shape[0], p=probs))


def _pick(l_final: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator) -> int:
    if cfg.mode == "greedy":
        # The cutoff never removes a maximal entry, so under greedy selection
        # it cannot change the outcome and the filtered copy is skipped.
        return int(l_final.argmax())
    return select_token(cutoff_filter(l_final, cfg.tau), cfg.mode, rng)


def recompute_final(step: StepRecord) -> np.ndarray:
    """Rebuild ``l_final`` from the inputs stored in a trace record."""
    if step.l_conf is None:
        return step.l_std
    return step.l_std - step.alpha * (step.c * step.l_conf)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _result(model: LogitModel, ctx: GenerationContext, trace: DecodeTrace) -> DecodeResult:
    tokens = tuple(ctx.generated_tokens)
    return DecodeResult(tokens=tokens, text=model.vocab.detokenize(tokens), trace=trace)


def rpgd_decode(
    model: LogitModel,
    ctx: GenerationContext,
    pivots: AbstractSet[int],
    cfg: DecodeConfig,
    seed: Optional[int] = None,
) -> DecodeResult:
    """Pivot-gated projected contrastive decoding.

    Each step queries the model on the standard and the patch-shuffled
    context, gates pivot tokens by the conflict logits, removes the gated
    projection of the standard logits onto the conflict logits, applies the
    plausibility cutoff and picks a token. Both pathways share the emitted
    prefix. ``seed`` (default ``cfg.rng_seed``) fixes both the patch
    permutation and the sampler.
    """
    validate_config(cfg)
    vocab = model.vocab
    seed = cfg.rng_seed if seed is None else seed
    eos = vocab.eos_id
    pivots = pivot_index(pivot_token_ids(pivots, len(vocab)) - {eos})
    rng = _rng(seed)
    base_gate = init_gate(len(vocab), cfg.epsilon)
    contrast = ctx.image is not None or cfg.contrast_text_only
    # One permutation per sample, shared by every step.
    shuffled = shuffled_view(ctx.image, seed) if ctx.image is not None else None
    trace = DecodeTrace()
    for _ in range(cfg.max_steps):
        t0 = time.perf_counter_ns()
        if contrast:
            l_std, l_conf = dual_pathway_logits(model, ctx, seed, shuffled)
            gate = _gate_kernel(base_gate, l_conf, pivots, cfg.beta, cfg.kappa) if len(pivots) else base_gate
            l_final, c = _subtract_kernel(l_std, l_conf, gate, cfg.delta)
        else:
            l_std = next_logits(model, ctx)
            l_conf = gate = c = None
            l_final = l_std
        token = _pick(l_final, cfg, rng)
        elapsed = max(1, time.perf_counter_ns() - t0)
        trace.steps.append(StepRecord(l_std, l_conf, gate, c, l_final, token, elapsed))
        ctx = ctx.append(token)
        if token == eos:
            break
    return _result(model, ctx, trace)


def greedy_decode(model: LogitModel, ctx: GenerationContext, cfg: DecodeConfig) -> DecodeResult:
    """Argmax over the standard pathway, one model call per step."""
    validate_config(cfg)
    eos = model.vocab.eos_id
    trace = DecodeTrace()
    for _ in range(cfg.max_steps):
        t0 = time.perf_counter_ns()
        l_std = next_logits(model, ctx)
        token = select_token(l_std, "greedy")
        elapsed = max(1, time.perf_counter_ns() - t0)
        trace.steps.append(StepRecord(l_std, None, None, None, l_std, token, elapsed))
        ctx = ctx.append(token)
        if token == eos:
            break
    return _result(model, ctx, trace)


def linear_contrast(l_std: np.ndarray, l_conf: np.ndarray, lam: float) -> np.ndarray:
    """``l_std - lam * l_conf``: the unprojected, ungated contrast baseline."""
    return np.asarray(l_std, dtype=np.float64) - lam * np.asarray(l_conf, dtype=np.float64)


def linear_contrast_decode(
    model: LogitModel,
    ctx: GenerationContext,
    lam: float,
    cfg: DecodeConfig,
    seed: Optional[int] = None,
) -> DecodeResult:
    validate_config(cfg)
    if not lam >= 0:
        raise RangeError("lambda", "must be >= 0")
    seed = cfg.rng_seed if seed is None else seed
    eos = model.vocab.eos_id
    rng = _rng(seed)
    alpha = np.full(len(model.vocab), float(lam))
    alpha.setflags(write=False)
    shuffled = shuffled_view(ctx.image, seed) if ctx.image is not None else None
    trace = DecodeTrace()
    for _ in range(cfg.max_steps):
        t0 = time.perf_counter_ns()
        l_std, l_conf = dual_pathway_logits(model, ctx, seed, shuffled)
        l_final = linear_contrast(l_std, l_conf, lam)
        token = _pick(l_final, cfg, rng)
        elapsed = max(1, time.perf_counter_ns() - t0)
        trace.steps.append(StepRecord(l_std, l_conf, alpha, 1.0, l_final, token, elapsed))
        ctx = ctx.append(token)
        if token == eos:
            break
    return _result(model, ctx, trace)


# -- trace export -------------------------------------------------------------


def _top_k(vec: Optional[np.ndarray], tokens, k: int):
    if vec is None:
        return None
    order = np.argsort(-vec, kind="stable")[:k]
    return [[int(i), tokens[i], float(vec[i])] for i in order]


def trace_records(
    result: DecodeResult,
    tokens: tuple[str, ...],
    pivots: AbstractSet[int] = frozenset(),
    k: int = 5,
    include_timing: bool = True,
) -> list[dict]:
    """One JSON-ready dict per step, with top-k views of the three logit vectors."""
    piv = sorted(pivots)
    out = []
    for i, step in enumerate(result.trace):
        alpha_mean = None
        if step.alpha is not None and piv:
            alpha_mean = float(np.mean(step.alpha[piv]))
        rec = {
            "step": i,
            "chosen_id": step.token,
            "chosen_token": tokens[step.token],
            "c": step.c,
            "alpha_pivot_mean": alpha_mean,
            "top_std": _top_k(step.l_std, tokens, k),
            "top_conf": _top_k(step.l_conf, tokens, k),
            "top_final": _top_k(step.l_final, tokens, k),
        }
        if include_timing:
            rec["elapsed_ns"] = step.elapsed_ns
        out.append(rec)
    return out


def write_trace_jsonl(records: Iterable[dict], fh: TextIO) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")

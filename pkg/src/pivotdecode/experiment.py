"""Decode a corpus with several methods and score the outcome.

Decoding produces one JSON-ready *verdict* dict per (sample, method).
Reports are built only from verdicts plus the gold corpus, so a report can
be regenerated from saved decode output without touching the model.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .adapters import GenerationContext, LogitModel
from .core import DecodeConfig, validate_config
from .corpus import ConflictSample
from .decoding import greedy_decode, linear_contrast_decode, rpgd_decode
from .errors import ConfigError, PivotDecodeError
from .metrics import balanced_accuracy, confusion, exact_match, f1, f1_from_counts, mcc, span_match_counts
from .pivots import PivotSpan, assertions_from_spans, detect_conflicts, pivot_token_set
from .shuffle import derive_seed

log = logging.getLogger(__name__)

TIMING_KEYS = ("ns_per_token",)


@dataclass(frozen=True)
class Method:
    name: str
    kind: str
    lam: float = 0.0

    @classmethod
    def parse(cls, spec: str) -> "Method":
        """``greedy``, ``rpgd`` or ``linear:<lambda>``."""
        if spec in ("greedy", "rpgd"):
            return cls(spec, spec)
        if spec.startswith("linear:"):
            try:
                lam = float(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad lambda in method {spec!r}") from None
            if lam < 0:
                raise ConfigError("linear contrast lambda must be >= 0")
            return cls(spec, "linear", lam)
        raise ConfigError(f"unknown method {spec!r} (expected greedy, rpgd or linear:<lambda>)")


@dataclass(frozen=True)
class Discrimination:
    conflict: bool
    spans: tuple[PivotSpan, ...]
    conflict_spans: tuple[PivotSpan, ...]


def annotation_discriminator(sample: ConflictSample) -> Discrimination:
    """Stand-in discriminator that reads the corpus pivot annotations.

    Flags the pivots whose annotated surfaces disagree and returns their
    spans as the tokens to gate.
    """
    conflicted = detect_conflicts(assertions_from_spans(sample.spans), sample.chain)
    hot = tuple(s for s in sample.spans if s.pivot_id in conflicted)
    return Discrimination(bool(conflicted), tuple(sample.spans), hot)


def decode_sample(
    sample: ConflictSample,
    model: LogitModel,
    method: Method,
    cfg: DecodeConfig,
    discriminator: Callable[[ConflictSample], Discrimination] = annotation_discriminator,
    base_dir: str | Path | None = None,
    keep_result: bool = False,
) -> dict:
    """Decode one sample; failures are captured in the verdict, not raised."""
    verdict = {"sample_id": sample.sample_id, "method": method.name}
    try:
        disc = discriminator(sample)
        ctx = GenerationContext(tuple(model.vocab.tokenize(sample.prompt())), image=sample.load_image(base_dir))
        seed = derive_seed(cfg.rng_seed, sample.sample_id)
        if method.kind == "greedy":
            res = greedy_decode(model, ctx, cfg)
        elif method.kind == "rpgd":
            pivots = pivot_token_set(disc.conflict_spans, model.vocab)
            res = rpgd_decode(model, ctx, pivots, cfg, seed=seed)
        else:
            res = linear_contrast_decode(model, ctx, method.lam, cfg, seed=seed)
    except PivotDecodeError as exc:
        log.warning("sample %s / %s failed: %s", sample.sample_id, method.name, exc)
        verdict.update(error=f"{type(exc).__name__}: {exc}", text=None, tokens=[], n_tokens=0)
        return verdict
    verdict.update(
        text=res.text,
        tokens=list(res.tokens),
        n_tokens=len(res.tokens),
        pred_conflict=disc.conflict,
        pred_spans=[s.to_dict() for s in disc.spans],
        ns_per_token=res.ns_per_token,
        error=None,
    )
    if keep_result:
        verdict["_result"] = res
    return verdict


@dataclass
class EvalReport:
    methods: dict
    discrimination: Optional[dict]
    verdicts: list
    config: dict
    seed: int
    latency: Optional[dict] = None

    def body(self) -> dict:
        """The deterministic part of the report (no wall-clock numbers)."""
        return {
            "config": self.config,
            "seed": self.seed,
            "methods": self.methods,
            "discrimination": self.discrimination,
            "verdicts": [{k: v for k, v in vd.items() if k not in TIMING_KEYS} for vd in self.verdicts],
        }

    def to_dict(self, include_timing: bool = False) -> dict:
        d = self.body()
        if include_timing:
            d["latency"] = self.latency
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def to_text(self, include_timing: bool = False) -> str:
        rows = [("method", "n", "correct", "accuracy", "errors")]
        for name, m in self.methods.items():
            rows.append((name, str(m["n"]), str(m["correct"]), f"{m['accuracy']:.4f}", str(m["errors"])))
        lines = _table(rows)
        if self.discrimination:
            d = self.discrimination
            lines.append("")
            lines += _table(
                [("discrimination", "MCC", "F1", "BA", "span F1"),
                 ("conflict", f"{d['mcc']:.4f}", f"{d['f1']:.4f}", f"{d['balanced_accuracy']:.4f}",
                  "-" if d.get("span_f1") is None else f"{d['span_f1']:.4f}")]
            )
        if include_timing and self.latency:
            lines.append("")
            rows = [("method", "median ns/token", "ratio vs greedy")]
            for name, lat in self.latency.items():
                ratio = "-" if lat["ratio_vs_greedy"] is None else f"{lat['ratio_vs_greedy']:.3f}"
                rows.append((name, f"{lat['median_ns_per_token']:.0f}", ratio))
            lines += _table(rows)
        return "\n".join(lines) + "\n"

    def verdicts_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "method", "text", "correct", "error"])
        for v in self.verdicts:
            w.writerow([v["sample_id"], v["method"], v.get("text") or "", int(bool(v.get("correct"))), v.get("error") or ""])
        return buf.getvalue()


def _table(rows) -> list[str]:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]


def build_report(
    verdicts: Iterable[dict],
    gold: Sequence[ConflictSample],
    cfg: Optional[DecodeConfig] = None,
    seed: Optional[int] = None,
) -> EvalReport:
    """Score verdicts against the gold corpus; output is ordered by sample id."""
    gold_by_id = {s.sample_id: s for s in gold}
    by_method: dict[str, list[dict]] = {}
    for v in verdicts:
        if v["sample_id"] not in gold_by_id:
            raise ConfigError(f"verdict for unknown sample {v['sample_id']!r}")
        v = {k: val for k, val in v.items() if not k.startswith("_")}
        v["correct"] = v.get("error") is None and exact_match(v.get("text") or "", gold_by_id[v["sample_id"]].answer)
        by_method.setdefault(v["method"], []).append(v)

    methods = {}
    latency = {}
    ordered = []
    for name, vs in by_method.items():
        vs.sort(key=lambda x: x["sample_id"])
        ordered.extend(vs)
        correct = sum(v["correct"] for v in vs)
        methods[name] = {
            "n": len(vs),
            "correct": correct,
            "accuracy": correct / len(vs) if vs else 0.0,
            "errors": sum(v.get("error") is not None for v in vs),
        }
        timed = [v["ns_per_token"] for v in vs if v.get("ns_per_token")]
        latency[name] = {"median_ns_per_token": statistics.median(timed) if timed else 0.0}
    greedy = latency.get("greedy", {}).get("median_ns_per_token")
    for lat in latency.values():
        lat["ratio_vs_greedy"] = lat["median_ns_per_token"] / greedy if greedy else None

    discrimination = None
    first = next(iter(by_method.values()), [])
    scored = [v for v in first if v.get("pred_conflict") is not None]
    if scored:
        counts = confusion([bool(v["pred_conflict"]) for v in scored],
                           [gold_by_id[v["sample_id"]].has_conflict for v in scored])
        discrimination = {
            "counts": counts.to_dict(),
            "mcc": mcc(counts),
            "f1": f1(counts),
            "balanced_accuracy": balanced_accuracy(counts),
            "span_f1": None,
        }
        with_spans = [v for v in scored if v.get("pred_spans") is not None]
        if with_spans:
            # Passage ids are only comparable within a sample: match per
            # sample, then micro-average the pooled counts.
            hits = n_pred = n_gold = 0
            for v in with_spans:
                pred = [PivotSpan.from_dict(s) for s in v["pred_spans"]]
                h, p, g = span_match_counts(pred, gold_by_id[v["sample_id"]].spans)
                hits, n_pred, n_gold = hits + h, n_pred + p, n_gold + g
            discrimination["span_f1"] = f1_from_counts(hits, n_pred, n_gold)

    return EvalReport(
        methods=methods,
        discrimination=discrimination,
        verdicts=ordered,
        config=cfg.to_dict() if cfg else {},
        seed=seed if seed is not None else (cfg.rng_seed if cfg else 0),
        latency=latency,
    )


def run_experiment(
    corpus: Sequence[ConflictSample],
    model: LogitModel,
    methods: Sequence[Method | str],
    cfg: DecodeConfig,
    discriminator: Callable[[ConflictSample], Discrimination] = annotation_discriminator,
    jobs: int = 1,
    base_dir: str | Path | None = None,
) -> EvalReport:
    """Decode every sample with every method and build the report."""
    validate_config(cfg)
    if not corpus:
        raise ConfigError("corpus is empty")
    if not methods:
        raise ConfigError("no decoding methods given")
    methods = [m if isinstance(m, Method) else Method.parse(m) for m in methods]
    if len({m.name for m in methods}) != len(methods):
        raise ConfigError("duplicate method names")
    jobs_list = [(s, m) for m in methods for s in corpus]

    def work(item):
        s, m = item
        return decode_sample(s, model, m, cfg, discriminator, base_dir)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(work, jobs_list))
    else:
        verdicts = [work(item) for item in jobs_list]
    return build_report(verdicts, corpus, cfg)

"""Binary classification and span-matching metrics.

All ratios fall back to 0 when their denominator is 0.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import LengthMismatch
from .pivots import PivotSpan

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def confusion(pred: Sequence[bool], gold: Sequence[bool]) -> ConfusionCounts:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions for {len(gold)} gold labels")
    tp = tn = fp = fn = 0
    for p, g in zip(pred, gold):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient."""
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def f1(c: ConfusionCounts) -> float:
    if c.tp == 0:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    return 2 * precision * recall / (precision + recall)


def balanced_accuracy(c: ConfusionCounts) -> float:
    """Mean of true-positive and true-negative rates."""
    tpr = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    tnr = c.tn / (c.tn + c.fp) if c.tn + c.fp else 0.0
    return (tpr + tnr) / 2


def _span_key(span: PivotSpan) -> tuple[int, str]:
    return span.passage_id, _WS.sub(" ", span.surface.strip().lower())


def span_match_counts(pred_spans: Sequence[PivotSpan], gold_spans: Sequence[PivotSpan]) -> tuple[int, int, int]:
    """``(matched, predicted, gold)`` counts; each gold span matches at most once."""
    pred = Counter(_span_key(s) for s in pred_spans)
    gold = Counter(_span_key(s) for s in gold_spans)
    return sum((pred & gold).values()), len(pred_spans), len(gold_spans)


def f1_from_counts(hits: int, n_pred: int, n_gold: int) -> float:
    if hits == 0:
        return 0.0
    p = hits / n_pred
    r = hits / n_gold
    return 2 * p * r / (p + r)


def span_f1(pred_spans: Sequence[PivotSpan], gold_spans: Sequence[PivotSpan]) -> float:
    """Micro F1 where a match needs the same passage and the same normalized surface."""
    return f1_from_counts(*span_match_counts(pred_spans, gold_spans))


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and English articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, gold: str) -> bool:
    return normalize_answer(prediction) == normalize_answer(gold)

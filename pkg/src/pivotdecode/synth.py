"""Conflict corpus synthesis: counterfactual pivot substitution and quality voting.

A base sample carries k supporting passages. Selected passages get their
ground-truth pivot value replaced by a same-category counterfactual, with a
rewriter grounded in reference text about the counterfactual. Each
synthesized sample is then scored ten times and kept only if the scores
pass the vote-of-confidence rule.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Optional, Protocol, Sequence, Union

import httpx

from .corpus import ConflictSample
from .errors import ArityError, ClientError, NoCandidate, RangeError, ValidationError
from .pivots import PivotSpan, normalize_value
from .shuffle import SplitMix64, derive_seed, permutation_from_seed

log = logging.getLogger(__name__)

N_VOTES = 10
MIN_TOTAL = 80
MIN_SINGLE = 6

DEFAULT_DEMONSTRATIONS: tuple[tuple[str, str], ...] = (
    (
        "The cathedral was consecrated in Cologne in 1322 and took six centuries to finish.",
        "The basilica was consecrated in Florence in 1436, crowning a construction effort of over a century.",
    ),
    (
        "Emperor penguins breed on the Antarctic sea ice during the polar winter.",
        "King penguins breed on sub-Antarctic islands such as South Georgia, raising chicks through the winter.",
    ),
    (
        "The violinist, born in Genoa, toured Europe as a celebrated virtuoso.",
        "The pianist, born in Zelazowa Wola, settled in Paris and gained fame as a composer.",
    ),
)


def _template(name: str) -> Template:
    return Template(resources.files("pivotdecode").joinpath("templates", name).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RewriteRequest:
    original: str
    p_gt: str
    p_neg: str
    reference_context: str
    demonstrations: tuple[tuple[str, str], ...] = DEFAULT_DEMONSTRATIONS
    pivot_id: Optional[str] = None

    def __post_init__(self):
        if not self.p_gt or self.p_gt not in self.original:
            raise ValidationError(f"ground-truth pivot {self.p_gt!r} does not occur in the passage")
        if not self.reference_context.strip():
            raise ValidationError("reference context must be non-empty")
        if not self.p_neg or normalize_value(self.p_neg) == normalize_value(self.p_gt):
            raise ValidationError("counterfactual pivot must differ from the ground truth")

    def render(self) -> str:
        demos = "".join(f"Example input:\n{i}\nExample output:\n{o}\n\n" for i, o in self.demonstrations)
        return _template("rewrite.txt").substitute(
            p_gt=self.p_gt,
            p_neg=self.p_neg,
            reference_context=self.reference_context.strip(),
            demonstrations=demos,
            original=self.original,
        )


def select_counterfactual(
    p_gt: tuple[str, str],
    candidates: Sequence[tuple[str, str]],
    seed: int = 0,
) -> str:
    """Pick a same-category replacement for ``p_gt = (value, category)``.

    The feasible candidates (same category, different value) keep their
    input order; the choice is the first element of a seeded shuffle.
    """
    value, category = p_gt
    gt = normalize_value(value)
    feasible: list[str] = []
    for cand, cat in candidates:
        if cat == category and normalize_value(cand) != gt and cand not in feasible:
            feasible.append(cand)
    if not feasible:
        raise NoCandidate(f"no {category!r} candidate differs from {value!r}")
    return feasible[permutation_from_seed(len(feasible), seed)[0]]


# -- clients ------------------------------------------------------------------


class Rewriter(Protocol):
    def rewrite(self, req: RewriteRequest) -> str: ...


class Scorer(Protocol):
    def score(self, sample: ConflictSample, seed: int) -> int: ...


_SENTENCE = re.compile(r"(.+?[.!?])(\s|$)", re.S)


class MockRewriter:
    """Swap the pivot surface and append the first reference sentence."""

    def rewrite(self, req: RewriteRequest) -> str:
        text = req.original.replace(req.p_gt, req.p_neg)
        ref = req.reference_context.strip()
        m = _SENTENCE.match(ref)
        first = m.group(1) if m else ref
        return f"{text.rstrip()} {first}"


class MockScorer:
    """Deterministic stand-in for a stochastic LLM judge.

    Returns ``base - k`` with ``k`` drawn uniformly from ``0..spread`` by a
    generator seeded with the call's seed, clipped to 0..10.
    """

    def __init__(self, base: int = 9, spread: int = 1):
        self.base = base
        self.spread = spread

    def score(self, sample: ConflictSample, seed: int) -> int:
        k = SplitMix64(seed).below(self.spread + 1) if self.spread else 0
        return max(0, min(10, self.base - k))


class _HTTPClient:
    def __init__(self, endpoint: str, timeout_ms: int = 60_000):
        self.endpoint = endpoint.rstrip("/")
        self._http = httpx.Client(timeout=timeout_ms / 1000)

    def _post(self, path: str, payload: dict) -> dict:
        url = self.endpoint + path
        try:
            resp = self._http.post(url, json=payload)
        except httpx.HTTPError as exc:
            raise ClientError(f"{url}: {exc}") from exc
        if resp.status_code >= 400:
            raise ClientError(f"{url} returned HTTP {resp.status_code}: {resp.text[:300]}")
        try:
            body = resp.json()
        except ValueError:
            raise ClientError(f"{url} returned a non-JSON body") from None
        if not isinstance(body, dict):
            raise ClientError(f"{url} returned {type(body).__name__}, expected an object")
        return body

    def close(self) -> None:
        self._http.close()


class RemoteRewriter(_HTTPClient):
    """POST ``{"prompt", "request"}`` to ``/v1/rewrite``; expects ``{"text": str}``."""

    def rewrite(self, req: RewriteRequest) -> str:
        body = self._post("/v1/rewrite", {
            "prompt": req.render(),
            "request": {
                "original": req.original,
                "p_gt": req.p_gt,
                "p_neg": req.p_neg,
                "reference_context": req.reference_context,
                "demonstrations": [list(d) for d in req.demonstrations],
            },
        })
        text = body.get("text")
        if not isinstance(text, str):
            raise ClientError("rewrite response lacks a 'text' string")
        return text


def render_score_prompt(sample: ConflictSample) -> str:
    passages = "\n".join(f"[{i + 1}] {p}" for i, p in enumerate(sample.passages))
    return _template("score.txt").substitute(question=sample.question, answer=sample.answer, passages=passages)


class RemoteScorer(_HTTPClient):
    """POST ``{"prompt", "seed"}`` to ``/v1/score``; expects ``{"score": int}``."""

    def score(self, sample: ConflictSample, seed: int) -> int:
        body = self._post("/v1/score", {"prompt": render_score_prompt(sample), "seed": seed})
        score = body.get("score")
        if isinstance(score, bool) or not isinstance(score, int):
            raise ClientError("score response lacks an integer 'score'")
        return score


# -- pipeline -----------------------------------------------------------------


def rewrite_passage(req: RewriteRequest, client: Rewriter) -> str:
    """Run the rewriter and insist that ``p_neg`` appears and ``p_gt`` does not."""
    text = client.rewrite(req)
    low = text.lower()
    if req.p_neg.lower() not in low:
        raise ValidationError(f"rewritten passage does not mention {req.p_neg!r}")
    if req.p_gt.lower() in low:
        raise ValidationError(f"rewritten passage still mentions {req.p_gt!r}")
    return text


def vote_of_confidence(scores: Sequence[int]) -> bool:
    """Keep a sample iff its ten scores sum to at least 80 and none is below 6."""
    if len(scores) != N_VOTES:
        raise ArityError(f"expected {N_VOTES} scores, got {len(scores)}")
    for s in scores:
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s <= 10:
            raise RangeError("score", f"{s!r} is not an integer in [0, 10]")
    return sum(scores) >= MIN_TOTAL and min(scores) >= MIN_SINGLE


@dataclass(frozen=True)
class Rejection:
    sample_id: str
    scores: tuple[int, ...]
    reason: str
    sample: Optional[ConflictSample] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "scores": list(self.scores), "reason": self.reason}


def _respan(spans: Sequence[PivotSpan], idx: int, text: str, req: RewriteRequest) -> list[PivotSpan]:
    out = []
    taken: list[tuple[int, int]] = []
    for s in spans:
        if s.passage_id != idx:
            out.append(s)
            continue
        surface = req.p_neg if s.surface == req.p_gt else s.surface
        occ = 0
        while True:
            new = PivotSpan.locate(idx, text, surface, s.pivot_id, occurrence=occ)
            if new is None or all(new.end <= a or new.start >= b for a, b in taken):
                break
            occ += 1
        if new is None:
            log.debug("span %r dropped after rewrite of passage %d", s.surface, idx)
            continue
        taken.append((new.start, new.end))
        out.append(new)
    return out


def build_sample(
    base: ConflictSample,
    substitutions: Sequence[tuple[int, RewriteRequest]],
    client: Rewriter,
    scorer: Scorer,
    seed: int = 0,
) -> Union[ConflictSample, Rejection]:
    """Apply the rewrites, relabel, and run the quality vote.

    Labels: no substitution gives ``no-conflict``; a substitution on the
    answer pivot gives ``high-conflict``; any other gives ``subtle-conflict``.
    """
    k = len(base.passages)
    indices = [i for i, _ in substitutions]
    if len(set(indices)) != len(indices) or any(not 0 <= i < k for i in indices):
        raise ValidationError(f"substitution indices must be distinct and in [0, {k})")
    passages = list(base.passages)
    spans = list(base.spans)
    for idx, req in substitutions:
        if req.original != passages[idx]:
            raise ValidationError(f"request for passage {idx} does not match the passage text")
        text = rewrite_passage(req, client)
        passages[idx] = text
        spans = _respan(spans, idx, text, req)
    if not substitutions:
        label = "no-conflict"
    elif any(req.pivot_id == base.chain.answer for _, req in substitutions):
        label = "high-conflict"
    else:
        label = "subtle-conflict"
    sample = base.replace(passages=tuple(passages), spans=tuple(spans), conflict_label=label)
    scores = tuple(scorer.score(sample, derive_seed(seed, f"{base.sample_id}/vote{i}")) for i in range(N_VOTES))
    extra = {k2: v for k2, v in base.extra.items() if k2 != "substitutions"}
    extra["quality_scores"] = list(scores)
    sample = sample.replace(extra=extra)
    if not vote_of_confidence(list(scores)):
        return Rejection(base.sample_id, scores, "vote-of-confidence", sample)
    return sample.validate(k)


def plan_substitutions(sample: ConflictSample, seed: int = 0) -> list[tuple[int, RewriteRequest]]:
    """Turn a record's ``substitutions`` plan into rewrite requests.

    Plan entries look like::

        {"passage": 1, "pivot_id": "nationality", "category": "nationality",
         "candidates": [["Spanish", "nationality"], ...],
         "references": {"Spanish": "Reference text ..."}}

    ``p_gt`` defaults to the surface of the first span of ``pivot_id`` in
    that passage.
    """
    plan = []
    for j, entry in enumerate(sample.extra.get("substitutions", [])):
        idx = int(entry["passage"])
        pivot_id = entry.get("pivot_id")
        p_gt = entry.get("p_gt")
        if p_gt is None:
            hits = [s for s in sample.spans if s.passage_id == idx and s.pivot_id == pivot_id]
            if not hits:
                raise ValidationError(f"sample {sample.sample_id}: no span of {pivot_id!r} in passage {idx}")
            p_gt = hits[0].surface
        candidates = [tuple(c) for c in entry["candidates"]]
        p_neg = select_counterfactual((p_gt, entry["category"]), candidates, derive_seed(seed, f"{sample.sample_id}/{j}"))
        references = entry.get("references", {})
        ref = references.get(p_neg) if isinstance(references, dict) else None
        if ref is None:
            raise ValidationError(f"sample {sample.sample_id}: no reference context for {p_neg!r}")
        demos = tuple(tuple(d) for d in entry.get("demonstrations", DEFAULT_DEMONSTRATIONS))
        plan.append((idx, RewriteRequest(sample.passages[idx], p_gt, p_neg, ref, demos, pivot_id)))
    return plan

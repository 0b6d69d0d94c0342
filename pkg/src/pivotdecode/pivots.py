"""Reasoning pivots: chain bookkeeping, conflict detection, span handling.

A reasoning chain ``e1 -p1-> e2 -p2-> ... -> y`` yields one pivot per node
and per edge. Passages contribute assertions about individual pivots, and a
pivot is in conflict when its assertions cannot all hold at once. Pivots
here are single-valued (a nationality, a date, a location), so two
assertions contradict exactly when their normalized values differ.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .adapters import EOS, PIVOT_CLOSE, PIVOT_OPEN, UNK, Vocabulary
from .errors import AlreadyWrapped, OverlapError, UnresolvedPivot, ValidationError

log = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class ReasoningChain:
    """Entities joined by properties; the last node is the answer ``y``.

    Labels double as pivot ids, so they must be unique across the chain.
    """

    nodes: tuple[str, ...]
    edges: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        if not self.nodes:
            raise ValidationError("reasoning chain needs at least one node")
        if len(self.edges) != len(self.nodes) - 1:
            raise ValidationError(
                f"chain with {len(self.nodes)} nodes needs {len(self.nodes) - 1} edges, got {len(self.edges)}"
            )
        labels = self.nodes + self.edges
        if any(not (isinstance(x, str) and x.strip()) for x in labels):
            raise ValidationError("chain labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ValidationError("chain labels must be unique")

    @property
    def answer(self) -> str:
        return self.nodes[-1]

    @property
    def pivots(self) -> frozenset[str]:
        return frozenset(self.nodes + self.edges)

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": list(self.edges)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ReasoningChain":
        return cls(tuple(data["nodes"]), tuple(data.get("edges", ())))


@dataclass(frozen=True)
class PivotAssertion:
    pivot_id: str
    value: str
    source_id: str = ""


@dataclass(frozen=True)
class PivotSpan:
    """Character span ``[start, end)`` of a pivot mention inside one passage."""

    passage_id: int
    start: int
    end: int
    surface: str
    pivot_id: Optional[str] = None

    def check(self, passage: str) -> None:
        if not 0 <= self.start < self.end <= len(passage):
            raise ValidationError(f"span [{self.start}, {self.end}) outside passage of length {len(passage)}")
        if passage[self.start:self.end] != self.surface:
            raise ValidationError(
                f"span surface {self.surface!r} does not match passage text {passage[self.start:self.end]!r}"
            )

    @classmethod
    def locate(cls, passage_id: int, passage: str, surface: str, pivot_id: Optional[str] = None, occurrence: int = 0):
        """Span of the ``occurrence``-th appearance of ``surface``, or None."""
        pos = -1
        for _ in range(occurrence + 1):
            pos = passage.find(surface, pos + 1)
            if pos < 0:
                return None
        return cls(passage_id, pos, pos + len(surface), surface, pivot_id)

    def to_dict(self) -> dict:
        d = {"passage": self.passage_id, "start": self.start, "end": self.end, "surface": self.surface}
        if self.pivot_id is not None:
            d["pivot_id"] = self.pivot_id
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PivotSpan":
        return cls(int(d["passage"]), int(d["start"]), int(d["end"]), d["surface"], d.get("pivot_id"))


# -- conflict predicate -------------------------------------------------------


def normalize_value(value: str, aliases: Optional[Mapping[str, str]] = None) -> str:
    norm = _WS.sub(" ", value.strip().lower())
    if aliases:
        norm = aliases.get(norm, norm)
    return norm


def load_alias_table(path: str | Path) -> dict[str, str]:
    """Read ``surface<TAB>canonical`` lines; keys and values are normalized."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.rsplit(None, 1)
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected two columns")
        table[normalize_value(parts[0])] = normalize_value(parts[1])
    return table


def detect_conflicts(
    assertions: Iterable[PivotAssertion],
    chain: Optional[ReasoningChain] = None,
    aliases: Optional[Mapping[str, str]] = None,
) -> frozenset[str]:
    """Pivots whose assertions carry two or more distinct normalized values.

    Values attached to different pivots are never compared, even when they
    share a property type.
    """
    values: dict[str, set[str]] = defaultdict(set)
    known = chain.pivots if chain is not None else None
    for a in assertions:
        if known is not None and a.pivot_id not in known:
            raise UnresolvedPivot(a.pivot_id)
        v = normalize_value(a.value, aliases)
        if not v:
            raise ValidationError(f"empty assertion value for pivot {a.pivot_id!r}")
        values[a.pivot_id].add(v)
    return frozenset(p for p, vs in values.items() if len(vs) >= 2)


def assertions_from_spans(spans: Iterable[PivotSpan]) -> list[PivotAssertion]:
    return [
        PivotAssertion(s.pivot_id, s.surface, str(s.passage_id)) for s in spans if s.pivot_id is not None
    ]


# -- span to token mapping ------------------------------------------------------


class PivotTokenSet(frozenset):
    """Frozen set of pivot token ids that also remembers how many pieces were unknown."""

    unknown: int

    def __new__(cls, ids: Iterable[int] = (), unknown: int = 0):
        obj = super().__new__(cls, ids)
        obj.unknown = unknown
        return obj


_EXCLUDED = (UNK, EOS, PIVOT_OPEN, PIVOT_CLOSE)


def pivot_token_set(
    spans: Sequence[PivotSpan],
    vocab: Vocabulary,
    tokenize: Optional[Callable[[str], Sequence[int]]] = None,
) -> PivotTokenSet:
    """Token ids of every span surface, tokenized as-is and with a leading space.

    Pieces that fall back to ``<unk>`` are dropped and counted; EOS and the
    pivot markers are never included.
    """
    tokenize = tokenize or vocab.tokenize
    excluded = {vocab.get(t) for t in _EXCLUDED} - {None}
    ids: set[int] = set()
    unknown = 0
    for span in spans:
        for variant in (span.surface, " " + span.surface):
            for tid in tokenize(variant):
                if tid == vocab.unk_id:
                    unknown += 1
                elif tid not in excluded:
                    ids.add(tid)
    if unknown:
        log.warning("%d pivot span piece(s) mapped to %s and were skipped", unknown, UNK)
    return PivotTokenSet(ids, unknown)


# -- <RPivot> markup ------------------------------------------------------------


def wrap_pivot_tokens(passage: str, spans: Sequence[PivotSpan]) -> str:
    """Enclose each span in ``<RPivot>...</RPivot>``; other text is untouched."""
    if PIVOT_OPEN in passage or PIVOT_CLOSE in passage:
        raise AlreadyWrapped("passage already contains pivot markers")
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    out = []
    pos = 0
    for span in ordered:
        span.check(passage)
        if span.start < pos:
            raise OverlapError(f"span [{span.start}, {span.end}) overlaps a previous span")
        out.append(passage[pos:span.start])
        out.append(f"{PIVOT_OPEN}{span.surface}{PIVOT_CLOSE}")
        pos = span.end
    out.append(passage[pos:])
    return "".join(out)


def strip_pivot_tokens(text: str) -> str:
    return text.replace(PIVOT_OPEN, "").replace(PIVOT_CLOSE, "")


def wrapped_surfaces(text: str) -> list[str]:
    """Surfaces enclosed by pivot markers, in order of appearance."""
    pattern = re.escape(PIVOT_OPEN) + r"(.*?)" + re.escape(PIVOT_CLOSE)
    return re.findall(pattern, text, flags=re.S)


def format_sft_target(
    question: str,
    question_spans: Sequence[PivotSpan],
    passages: Sequence[str],
    passage_spans: Sequence[PivotSpan],
    conflict: bool,
) -> str:
    """Three-stage discriminator target: question pivots, passage pivots, verdict.

    ``question_spans`` use passage id -1 by convention and index into
    ``question``.
    """
    lines = ["Question pivots: " + wrap_pivot_tokens(question, question_spans)]
    by_passage: dict[int, list[PivotSpan]] = defaultdict(list)
    for s in passage_spans:
        by_passage[s.passage_id].append(s)
    lines.append("Paragraph pivots:")
    for i, passage in enumerate(passages):
        found = sorted(by_passage.get(i, []), key=lambda s: s.start)
        marked = " ".join(f"{PIVOT_OPEN}{s.surface}{PIVOT_CLOSE}" for s in found) or "none"
        lines.append(f"[{i + 1}] {marked}")
    lines.append("Conflict: " + ("yes" if conflict else "no"))
    return "\n".join(lines)

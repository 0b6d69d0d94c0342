"""Conflict corpus records and their JSONL representation.

One line per sample::

    {"sample_id": "s0", "question": "...", "answer": "...",
     "passages": ["...", ...],                      # exactly k (default 5)
     "image": {"format": "json", "n": N, "d": D, "patches": [[...]]} | null,
     "chain": {"nodes": [...], "edges": [...]},
     "spans": [{"passage": 0, "start": 3, "end": 8, "surface": "Spain", "pivot_id": "nationality"}],
     "conflict_label": "no-conflict" | "subtle-conflict" | "high-conflict"}

Extra keys are kept in ``extra`` and written back unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import CorpusError, PivotDecodeError
from .pivots import PivotSpan, ReasoningChain
from .shuffle import read_grid

DEFAULT_K = 5
CONFLICT_LABELS = ("no-conflict", "subtle-conflict", "high-conflict")
_KNOWN = {"sample_id", "question", "answer", "passages", "image", "chain", "spans", "conflict_label"}


@dataclass(frozen=True)
class ConflictSample:
    sample_id: str
    question: str
    answer: str
    passages: tuple[str, ...]
    chain: ReasoningChain
    spans: tuple[PivotSpan, ...] = ()
    conflict_label: str = "no-conflict"
    image: Optional[dict] = None
    extra: dict = field(default_factory=dict, compare=False)

    def validate(self, k: int = DEFAULT_K) -> "ConflictSample":
        if len(self.passages) != k:
            raise CorpusError(f"sample {self.sample_id}: expected {k} passages, got {len(self.passages)}")
        if self.conflict_label not in CONFLICT_LABELS:
            raise CorpusError(f"sample {self.sample_id}: unknown conflict label {self.conflict_label!r}")
        pivots = self.chain.pivots
        for span in self.spans:
            if not 0 <= span.passage_id < len(self.passages):
                raise CorpusError(f"sample {self.sample_id}: span refers to passage {span.passage_id}")
            try:
                span.check(self.passages[span.passage_id])
            except PivotDecodeError as exc:
                raise CorpusError(f"sample {self.sample_id}: {exc}") from None
            if span.pivot_id is not None and span.pivot_id not in pivots:
                raise CorpusError(f"sample {self.sample_id}: span pivot {span.pivot_id!r} not in chain")
        return self

    @property
    def has_conflict(self) -> bool:
        return self.conflict_label != "no-conflict"

    def load_image(self, base_dir: str | Path | None = None) -> Optional[np.ndarray]:
        if self.image is None:
            return None
        return read_grid(self.image, base_dir)

    def prompt(self) -> str:
        body = "\n".join(f"[{i + 1}] {p}" for i, p in enumerate(self.passages))
        return f"Context:\n{body}\nQuestion: {self.question}\nAnswer:"

    def replace(self, **changes) -> "ConflictSample":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "question": self.question,
            "answer": self.answer,
            "passages": list(self.passages),
            "image": self.image,
            "chain": self.chain.to_dict(),
            "spans": [s.to_dict() for s in self.spans],
            "conflict_label": self.conflict_label,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict, k: int = DEFAULT_K) -> "ConflictSample":
        try:
            sample = cls(
                sample_id=str(d["sample_id"]),
                question=d["question"],
                answer=d["answer"],
                passages=tuple(d["passages"]),
                chain=ReasoningChain.from_dict(d["chain"]),
                spans=tuple(PivotSpan.from_dict(s) for s in d.get("spans", [])),
                conflict_label=d.get("conflict_label", "no-conflict"),
                image=d.get("image"),
                extra={key: v for key, v in d.items() if key not in _KNOWN},
            )
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"malformed corpus record: {exc!r}") from None
        except PivotDecodeError as exc:
            raise CorpusError(f"sample {d.get('sample_id')}: {exc}") from None
        return sample.validate(k)


def read_corpus(path: str | Path, k: int = DEFAULT_K) -> list[ConflictSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            samples.append(ConflictSample.from_dict(record, k))
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise CorpusError(f"{path}: duplicate sample ids")
    return samples


def dumps_sample(sample: ConflictSample) -> str:
    return json.dumps(sample.to_dict(), ensure_ascii=False, sort_keys=True)


def write_corpus(samples: Iterable[ConflictSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dumps_sample(s) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
